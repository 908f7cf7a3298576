import type { AnalysisResponse } from './types.js';

export interface PollOptions {
  intervalMs?: number;
  sleep?: (ms: number) => Promise<void>;
  onUpdate?: (a: AnalysisResponse) => void;
  maxPolls?: number;
}

const realSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/** Poll the job until done/failed (1 s default), reporting progress on the way. */
export async function pollJob(
  fetchAnalysis: () => Promise<AnalysisResponse>,
  options: PollOptions = {},
): Promise<AnalysisResponse> {
  const { intervalMs = 1000, sleep = realSleep, onUpdate, maxPolls = 600 } = options;
  for (let i = 0; i < maxPolls; i++) {
    const analysis = await fetchAnalysis();
    onUpdate?.(analysis);
    if (analysis.job.state === 'done' || analysis.job.state === 'failed') {
      return analysis;
    }
    await sleep(intervalMs);
  }
  throw new Error('gave up waiting for the analysis to settle');
}
