/**
 * Command line entry point: run an extraction job from a JSON job spec.
 */

import { parseArgs } from "node:util";

import { parseJob, runJob } from "./extract.js";

const USAGE = `usage: extractors extract --job <job.json>

Runs every video in the job spec through the configured backend and writes
feature files, label CSVs, and a dataset manifest to the job's out_dir.`;

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command === "--help" || command === "-h" || command === undefined) {
    console.log(USAGE);
    return command === undefined ? 1 : 0;
  }
  if (command !== "extract") {
    console.error(`unknown command: ${command}\n${USAGE}`);
    return 1;
  }
  let jobPath: string | undefined;
  try {
    const { values } = parseArgs({
      args: rest,
      options: { job: { type: "string" } },
    });
    jobPath = values.job;
  } catch (err) {
    console.error((err as Error).message);
    return 1;
  }
  if (!jobPath) {
    console.error("extract requires --job <job.json>");
    return 1;
  }
  try {
    const report = runJob(parseJob(jobPath));
    for (const video of report.videos) {
      const fallback =
        video.fallbackFrames.length > 0 ? `, ${video.fallbackFrames.length} fallback frames` : "";
      console.log(`${video.videoId}: ${video.frameCount} frames${fallback}`);
      for (const warning of video.warnings) {
        console.error(`warning: ${video.videoId}: ${warning}`);
      }
    }
    console.log(`wrote ${report.manifestPath}`);
    return 0;
  } catch (err) {
    console.error((err as Error).message);
    return 1;
  }
}

process.exitCode = main(process.argv.slice(2));
