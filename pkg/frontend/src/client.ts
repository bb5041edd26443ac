/** HTTP client for the control service: commands, info, event cursoring. */

import type {
  CommandAck,
  CommandRequest,
  ServiceEvent,
  ServiceRejection,
  SessionInfo,
} from "./protocol.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class CommandRejected extends Error {
  constructor(
    public readonly rejection: ServiceRejection,
    public readonly status: number,
  ) {
    super(`${rejection.code}: ${rejection.message}`);
  }
}

export class SessionClient {
  private cursor = 0;

  constructor(
    private readonly base: string,
    public readonly sessionId: string,
    private readonly fetchImpl: FetchLike,
  ) {}

  static async create(
    base: string,
    body: { scenario: object; grid?: object; seed?: number; tick_rate?: number },
    fetchImpl: FetchLike,
  ): Promise<SessionClient> {
    const resp = await fetchImpl(`${base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = (await resp.json()) as { id?: string; detail?: ServiceRejection };
    if (resp.status !== 200 || !payload.id) {
      throw new CommandRejected(
        payload.detail ?? { code: "create_failed", message: `status ${resp.status}` },
        resp.status,
      );
    }
    return new SessionClient(base, payload.id, fetchImpl);
  }

  async command(cmd: CommandRequest): Promise<CommandAck> {
    const resp = await this.fetchImpl(
      `${this.base}/sessions/${this.sessionId}/command`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(cmd),
      },
    );
    const payload = (await resp.json()) as CommandAck & { detail?: ServiceRejection };
    if (resp.status !== 200) {
      throw new CommandRejected(
        payload.detail ?? { code: "error", message: `status ${resp.status}` },
        resp.status,
      );
    }
    return payload;
  }

  async info(): Promise<SessionInfo> {
    const resp = await this.fetchImpl(`${this.base}/sessions/${this.sessionId}/info`);
    return (await resp.json()) as SessionInfo;
  }

  /** Poll events past the internal cursor; returns them in seq order. */
  async pollEvents(): Promise<ServiceEvent[]> {
    const resp = await this.fetchImpl(
      `${this.base}/sessions/${this.sessionId}/events/log?since=${this.cursor}`,
    );
    const payload = (await resp.json()) as { events: ServiceEvent[]; next: number };
    this.cursor = payload.next;
    return payload.events;
  }
}
