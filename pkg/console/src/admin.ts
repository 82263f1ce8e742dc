/**
 * Admin flow: review queue with allocation preview, cluster snapshot grid,
 * fan-out console. All state comes from the API; a 401 renders the lockout.
 */

import {
  AllocationPreview,
  ApiFailure,
  ClusterSnapshot,
  FanoutEnvelope,
  GatewayApi,
  PendingApplication,
  ReviewResult
} from './api.js'

export class AdminFlow {
  constructor(
    private readonly api: GatewayApi,
    private readonly secret: string
  ) {}

  pending(): Promise<PendingApplication[]> {
    return this.api.listApplications(this.secret, 'submitted')
  }

  preview(appId: string, nodeCount: number): Promise<AllocationPreview> {
    return this.api.preview(this.secret, appId, nodeCount)
  }

  approve(appId: string, nodeCount: number, periodHours: number): Promise<ReviewResult> {
    return this.api.review(this.secret, appId, {
      decision: 'approve',
      node_count: nodeCount,
      period_hours: periodHours
    })
  }

  reject(appId: string): Promise<ReviewResult> {
    return this.api.review(this.secret, appId, { decision: 'reject' })
  }

  snapshot(): Promise<ClusterSnapshot> {
    return this.api.snapshot(this.secret)
  }

  fanout(selector: string, command: string): Promise<FanoutEnvelope[]> {
    return this.api.fanout(this.secret, selector, command)
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = ''
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value)
  }
  if (text) {
    node.textContent = text
  }
  return node
}

export function renderLockout(root: HTMLElement): void {
  root.replaceChildren(
    el('section', { class: 'card error', 'data-role': 'lockout' }, 'Admin secret rejected.')
  )
}

export interface AdminHandlers {
  onPreview: (appId: string, nodes: number) => void
  onApprove: (appId: string, nodes: number, hours: number) => void
  onReject: (appId: string) => void
  onFanout: (selector: string, command: string) => void
}

export function renderPendingQueue(
  root: HTMLElement,
  pending: PendingApplication[],
  previews: Map<string, AllocationPreview>,
  lastError: ApiFailure | null,
  handlers: AdminHandlers
): void {
  const section = el('section', { class: 'card', 'data-role': 'queue' })
  section.append(el('h2', {}, `Review queue (${pending.length})`))
  if (lastError) {
    section.append(
      el('div', { class: 'error', 'data-role': 'review-error' }, `${lastError.code}: ${lastError.message}`)
    )
  }
  for (const app of pending) {
    const row = el('div', { class: 'pending', 'data-app': app.app_id })
    row.append(el('h3', {}, `${app.app_id} — ${app.applicant.name} <${app.applicant.contact}>`))
    row.append(el('p', {}, app.applicant.job_description))
    row.append(el('p', {}, `Requested nodes: ${app.nodes_requested}`))
    const nodes = el('input', { type: 'number', value: '2', min: '1', 'data-role': 'nodes' })
    const hours = el('input', { type: 'number', value: '48', min: '1', 'data-role': 'hours' })
    const previewButton = el('button', { 'data-action': 'preview' }, 'Preview allocation')
    previewButton.addEventListener('click', () =>
      handlers.onPreview(app.app_id, Number(nodes.value))
    )
    const approveButton = el('button', { 'data-action': 'approve', class: 'primary' }, 'Approve')
    approveButton.addEventListener('click', () =>
      handlers.onApprove(app.app_id, Number(nodes.value), Number(hours.value))
    )
    const rejectButton = el('button', { 'data-action': 'reject' }, 'Reject')
    rejectButton.addEventListener('click', () => handlers.onReject(app.app_id))
    row.append(nodes, hours, previewButton, approveButton, rejectButton)
    const preview = previews.get(app.app_id)
    if (preview) {
      row.append(
        el(
          'p',
          { 'data-role': 'preview' },
          `Would assign: ${preview.assignment.join(', ')} (fitness ${preview.fitness})`
        )
      )
    }
    section.append(row)
  }
  root.append(section)
}

export function renderSnapshot(root: HTMLElement, snapshot: ClusterSnapshot): void {
  const section = el('section', { class: 'card', 'data-role': 'snapshot' })
  section.append(el('h2', {}, 'Cluster'))
  const grid = el('div', { class: 'node-grid' })
  for (const node of snapshot.nodes) {
    const tile = el('div', {
      class: `node-tile power-${node.power}${node.stale ? ' stale' : ''}`,
      'data-node': node.node_id
    })
    tile.append(el('strong', {}, node.node_id))
    tile.append(el('span', {}, node.tier))
    tile.append(el('span', {}, node.power))
    if (node.temperature_c !== null) {
      tile.append(el('span', {}, `${node.temperature_c.toFixed(1)} C`))
    }
    if (node.stale) {
      tile.append(el('span', { class: 'stale-flag' }, 'stale'))
    }
    if (node.owner) {
      tile.append(el('span', { class: 'owner' }, node.owner))
    }
    grid.append(tile)
  }
  section.append(grid)
  if (snapshot.blocks) {
    const table = el('table', { 'data-role': 'blocks' })
    for (const block of snapshot.blocks) {
      const row = el('tr')
      row.append(el('td', {}, block.block_id))
      row.append(el('td', {}, block.app_id))
      row.append(el('td', {}, `${block.size} nodes`))
      row.append(el('td', {}, `${(block.period_remaining_s / 3600).toFixed(1)} h left`))
      table.append(row)
    }
    section.append(el('h3', {}, 'Active blocks'), table)
  }
  root.append(section)
}

export function renderFanoutConsole(
  root: HTMLElement,
  envelopes: FanoutEnvelope[],
  handlers: AdminHandlers
): void {
  const section = el('section', { class: 'card', 'data-role': 'fanout' })
  section.append(el('h2', {}, 'Fan-out'))
  const selector = el('input', { value: 'all', 'data-role': 'selector' })
  const command = el('input', { placeholder: 'echo hi', 'data-role': 'command' })
  const run = el('button', { 'data-action': 'fanout' }, 'Run everywhere')
  run.addEventListener('click', () => handlers.onFanout(selector.value, command.value))
  section.append(selector, command, run)
  for (const envelope of envelopes) {
    const card = el('div', { class: 'envelope', 'data-node': envelope.node_id })
    if (envelope.error) {
      card.append(el('strong', {}, `${envelope.node_id}: ${envelope.error}`))
    } else {
      card.append(el('strong', {}, `${envelope.node_id} (exit ${envelope.exit_code})`))
      card.append(el('pre', {}, envelope.stdout ?? ''))
      if (envelope.stderr) {
        card.append(el('pre', { class: 'stderr' }, envelope.stderr))
      }
    }
    section.append(card)
  }
  root.append(section)
}
