/** Thin client for the design service; fetch is injectable for tests. */

import { DesignRequest, DesignResponse, ScenarioInfo } from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl = '',
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  async scenarios(): Promise<ScenarioInfo[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/v1/scenarios`);
    if (!resp.ok) throw new Error(`scenarios failed: ${resp.status}`);
    return (await resp.json()) as ScenarioInfo[];
  }

  async design(req: DesignRequest): Promise<DesignResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/v1/design`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(req),
    });
    if (!resp.ok) throw new Error(`design failed: ${resp.status}`);
    return (await resp.json()) as DesignResponse;
  }
}
