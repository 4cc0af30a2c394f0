// HTTP client for the service; the only configuration is the base URL.

import { readSseStream } from './sse.js';
import type { ChunkRecord, StreamEvent } from './types.js';

export type FetchLike = typeof fetch;

export class GmpilotClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  async createSession(): Promise<string> {
    const resp = await this.fetchImpl(this.url('/v1/sessions'), { method: 'POST' });
    if (!resp.ok) throw new Error(`createSession: HTTP ${resp.status}`);
    const body = (await resp.json()) as { session_id: string };
    return body.session_id;
  }

  async streamQuery(
    sessionId: string,
    query: string,
    onEvent: (event: StreamEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const resp = await this.fetchImpl(this.url(`/v1/sessions/${sessionId}/query`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ query }),
      signal,
    });
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const err = (await resp.json()) as { error?: string };
        if (err.error) detail = err.error;
      } catch {
        // keep the HTTP status text
      }
      throw new Error(`query failed: ${detail}`);
    }
    if (!resp.body) throw new Error('query failed: empty response body');
    await readSseStream(resp.body, (frame) => {
      onEvent(JSON.parse(frame.data) as StreamEvent);
    });
  }

  async fetchStats(): Promise<unknown> {
    const resp = await this.fetchImpl(this.url('/v1/stats'));
    if (!resp.ok) throw new Error(`stats: HTTP ${resp.status}`);
    return resp.json();
  }

  async fetchChunk(chunkId: string): Promise<ChunkRecord | null> {
    const resp = await this.fetchImpl(this.url(`/v1/chunks/${encodeURIComponent(chunkId)}`));
    if (resp.status === 404) return null;
    if (!resp.ok) throw new Error(`chunk fetch: HTTP ${resp.status}`);
    return (await resp.json()) as ChunkRecord;
  }
}
