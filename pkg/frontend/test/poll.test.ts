import { describe, expect, it } from 'vitest';

import { pollJob } from '../src/poll.js';
import type { AnalysisResponse, JobRecord } from '../src/types.js';

function job(state: JobRecord['state']): AnalysisResponse {
  return {
    job: {
      job_id: 'j1',
      image_id: 'i1',
      laterality: 'left',
      state,
      structures: { onh: 'pending', macula: 'pending', vessels: 'pending' },
      errors: {},
      created: '',
      updated: '',
      error: null,
    },
    report: null,
  };
}

describe('pollJob', () => {
  it('polls until the job settles and reports progress', async () => {
    const states: JobRecord['state'][] = ['queued', 'running', 'running', 'done'];
    let calls = 0;
    const sleeps: number[] = [];
    const seen: string[] = [];
    const result = await pollJob(async () => job(states[calls++]), {
      intervalMs: 1000,
      sleep: async (ms) => {
        sleeps.push(ms);
      },
      onUpdate: (a) => seen.push(a.job.state),
    });
    expect(result.job.state).toBe('done');
    expect(calls).toBe(4);
    expect(sleeps).toEqual([1000, 1000, 1000]); // 1 s cadence
    expect(seen).toEqual(['queued', 'running', 'running', 'done']);
  });

  it('returns failed jobs without throwing', async () => {
    const result = await pollJob(async () => job('failed'), { sleep: async () => {} });
    expect(result.job.state).toBe('failed');
  });

  it('gives up after maxPolls', async () => {
    await expect(
      pollJob(async () => job('running'), { sleep: async () => {}, maxPolls: 3 }),
    ).rejects.toThrow(/gave up/);
  });
});
