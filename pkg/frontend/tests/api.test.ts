import { describe, expect, it } from 'vitest';

import { AnnotationApi, ApiError, ConflictError } from '../src/api.js';
import { StubService } from './stub-service.js';

describe('AnnotationApi', () => {
  it('returns null from nextTask when the queue is empty', async () => {
    const api = new AnnotationApi('', new StubService(0).fetchFn);
    expect(await api.nextTask('r1')).toBeNull();
  });

  it('fetches the first open task the rater has not rated', async () => {
    const stub = new StubService(2);
    const api = new AnnotationApi('', stub.fetchFn);
    const task = await api.nextTask('r1');
    expect(task?.task_id).toBe('t00001');
    await api.submitRatings('t00001', 'r1', {
      plausibility: 1, typicality: 1, human_centric: 1, filter_rationale: 1,
    });
    expect((await api.nextTask('r1'))?.task_id).toBe('t00002');
  });

  it('raises ConflictError on duplicate submissions', async () => {
    const stub = new StubService(1);
    const api = new AnnotationApi('', stub.fetchFn);
    const ratings = {
      plausibility: 1, typicality: 0, human_centric: 1, filter_rationale: 0,
    } as const;
    await api.submitRatings('t00001', 'r1', ratings);
    await expect(api.submitRatings('t00001', 'r1', ratings)).rejects.toBeInstanceOf(ConflictError);
  });

  it('surfaces the service detail message on failures', async () => {
    const api = new AnnotationApi('', new StubService(1).fetchFn);
    await expect(api.getTask('t09999')).rejects.toThrow('no task t09999');
    await expect(api.getTask('t09999')).rejects.toBeInstanceOf(ApiError);
  });

  it('joins base URLs with and without trailing slashes', async () => {
    const seen: string[] = [];
    const fetchFn = async (input: string) => {
      seen.push(input);
      return new Response(JSON.stringify({ tasks_open: 0, tasks_complete: 0, positive_rates: {} }), {
        status: 200,
      });
    };
    await new AnnotationApi('http://svc:9/', fetchFn).summary();
    await new AnnotationApi('http://svc:9', fetchFn).summary();
    expect(seen).toEqual(['http://svc:9/reports/summary', 'http://svc:9/reports/summary']);
  });
});
