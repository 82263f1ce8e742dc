/**
 * Typed client for the gateway HTTP+JSON API. Same-origin by default; the
 * fetch implementation is injectable so component tests can mock the wire.
 */

import type { ApplicationState, ApplicationView } from './state.js'

export interface NodeTile {
  node_id: string
  power: 'on' | 'off'
  temperature_c: number | null
  load: number | null
  owned: boolean
  stale: boolean
  tier: string
  owner?: string | null
}

export interface BlockView {
  block_id: string
  app_id: string
  size: number
  master_node: string
  period_remaining_s: number
}

export interface ClusterSnapshot {
  nodes: NodeTile[]
  tick_seconds: number
  environments: string[]
  blocks?: BlockView[]
}

export interface PendingApplication extends ApplicationView {
  applicant: { name: string; contact: string; job_description: string }
}

export interface ReviewResult {
  app_id: string
  state: ApplicationState
  assignment?: string[]
  fitness?: number
  period_hours?: number
  access_token?: string
}

export interface AllocationPreview {
  app_id: string
  assignment: string[]
  fitness: number
}

export interface FanoutEnvelope {
  node_id: string
  exit_code?: number
  stdout?: string
  stderr?: string
  error?: string
}

export interface UsageReport {
  app_id: string
  state: ApplicationState
  samples: Record<string, Array<{ temperature_c: number; load: number; taken_at: number }>>
  history: Array<Record<string, unknown>>
}

/** API errors surface verbatim: machine code + human message + HTTP status. */
export class ApiFailure extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string
  ) {
    super(message)
    this.name = 'ApiFailure'
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class GatewayApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async call<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init)
    if (!response.ok) {
      let code = 'http_error'
      let message = `${response.status}`
      try {
        const body = (await response.json()) as { error?: { code: string; message: string } }
        if (body.error) {
          code = body.error.code
          message = body.error.message
        }
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiFailure(response.status, code, message)
    }
    return (await response.json()) as T
  }

  private userHeaders(token: string): Record<string, string> {
    return { Authorization: `Bearer ${token}` }
  }

  private adminHeaders(secret: string): Record<string, string> {
    return { 'X-Admin-Secret': secret }
  }

  // -- user flow ------------------------------------------------------------

  register(form: {
    name: string
    contact: string
    job_description: string
    nodes_requested: number
  }): Promise<{ app_id: string }> {
    return this.call('/applications', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(form)
    })
  }

  getApplication(appId: string, token: string): Promise<ApplicationView> {
    return this.call(`/applications/${appId}`, { headers: this.userHeaders(token) })
  }

  confirm(appId: string, token: string): Promise<{ block_id: string; master_node: string }> {
    return this.call(`/applications/${appId}/confirm`, {
      method: 'POST',
      headers: this.userHeaders(token)
    })
  }

  uploadJob(
    appId: string,
    token: string,
    archive: Blob,
    environment: string
  ): Promise<{ job_id: string; state: string }> {
    const form = new FormData()
    form.append('archive', archive, 'job.tar')
    form.append('environment', environment)
    return this.call(`/applications/${appId}/jobs`, {
      method: 'POST',
      headers: this.userHeaders(token),
      body: form
    })
  }

  executeJob(jobId: string, token: string): Promise<{ job_id: string; state: string }> {
    return this.call(`/jobs/${jobId}/execute`, {
      method: 'POST',
      headers: this.userHeaders(token)
    })
  }

  jobStatus(jobId: string, token: string): Promise<{ state: string }> {
    return this.call(`/jobs/${jobId}`, { headers: this.userHeaders(token) })
  }

  async downloadResult(jobId: string, token: string): Promise<Blob> {
    const response = await this.fetchFn(`${this.baseUrl}/jobs/${jobId}/result`, {
      headers: this.userHeaders(token)
    })
    if (!response.ok) {
      const body = (await response.json()) as { error?: { code: string; message: string } }
      throw new ApiFailure(response.status, body.error?.code ?? 'http_error', body.error?.message ?? '')
    }
    return response.blob()
  }

  usageReport(appId: string, token: string): Promise<UsageReport> {
    return this.call(`/applications/${appId}/report`, { headers: this.userHeaders(token) })
  }

  // -- monitoring -------------------------------------------------------------

  snapshot(adminSecret?: string): Promise<ClusterSnapshot> {
    return this.call('/cluster', {
      headers: adminSecret ? this.adminHeaders(adminSecret) : {}
    })
  }

  // -- admin flow ----------------------------------------------------------------

  listApplications(secret: string, state?: ApplicationState): Promise<PendingApplication[]> {
    const query = state ? `?state=${state}` : ''
    return this.call(`/admin/applications${query}`, { headers: this.adminHeaders(secret) })
  }

  review(
    secret: string,
    appId: string,
    decision: { decision: 'approve'; node_count: number; period_hours: number } | { decision: 'reject' }
  ): Promise<ReviewResult> {
    return this.call(`/admin/applications/${appId}/review`, {
      method: 'POST',
      headers: { ...this.adminHeaders(secret), 'Content-Type': 'application/json' },
      body: JSON.stringify(decision)
    })
  }

  preview(secret: string, appId: string, nodeCount: number): Promise<AllocationPreview> {
    return this.call(`/admin/applications/${appId}/preview`, {
      method: 'POST',
      headers: { ...this.adminHeaders(secret), 'Content-Type': 'application/json' },
      body: JSON.stringify({ node_count: nodeCount })
    })
  }

  fanout(secret: string, selector: string, command: string): Promise<FanoutEnvelope[]> {
    return this.call('/admin/fanout', {
      method: 'POST',
      headers: { ...this.adminHeaders(secret), 'Content-Type': 'application/json' },
      body: JSON.stringify({ selector, command })
    })
  }
}
