export * from "./featureFile.js";
export * from "./labels.js";
export * from "./manifest.js";
export * from "./images.js";
export * from "./align.js";
export * from "./windows.js";
export * from "./audio.js";
export * from "./backends.js";
export * from "./extract.js";
