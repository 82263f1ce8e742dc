/**
 * User flow rendering: registration, waiting room, confirm, job workspace.
 *
 * Every action button carries data-action so tests can assert the rendered
 * set equals the state table; the single state-appropriate call-to-action
 * gets the `primary` class. Illegal actions are simply not rendered.
 */

import { ApiFailure, GatewayApi } from './api.js'
import {
  ApplicationView,
  PRIMARY_ACTION,
  STATE_HINTS,
  UserAction,
  renderedActions
} from './state.js'

export interface UserHandlers {
  onConfirm: () => void
  onUpload: (archive: File, environment: string) => void
  onExecute: (jobId: string) => void
  onDownload: (jobId: string) => void
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

function actionButton(action: UserAction, label: string, primary: boolean): HTMLButtonElement {
  const button = el('button', { 'data-action': action }, label)
  if (primary) {
    button.classList.add('primary')
  }
  return button
}

export function renderError(root: HTMLElement, failure: unknown): void {
  const box = el('div', { class: 'error', 'data-role': 'error' })
  if (failure instanceof ApiFailure) {
    box.textContent = `${failure.code}: ${failure.message}`
  } else {
    box.textContent = String(failure)
  }
  root.prepend(box)
}

export function renderUserView(
  root: HTMLElement,
  view: ApplicationView,
  environments: string[],
  handlers: UserHandlers
): void {
  root.replaceChildren()
  const actions = renderedActions(view)
  const primary = PRIMARY_ACTION[view.state]

  const card = el('section', { class: 'card', 'data-role': 'application' })
  card.append(el('h2', {}, `Application ${view.app_id}`))
  const badge = el('span', { class: `state state-${view.state}`, 'data-role': 'state' }, view.state)
  card.append(badge)
  card.append(el('p', { class: 'hint' }, STATE_HINTS[view.state]))

  if (view.assignment.length > 0) {
    card.append(el('p', {}, `Assigned nodes: ${view.assignment.join(', ')}`))
  }
  if (view.master_node) {
    card.append(el('p', {}, `Master node: ${view.master_node}`))
  }
  if (view.period) {
    const [start, end] = view.period
    const hours = ((end - start) / 3600).toFixed(1)
    card.append(el('p', {}, `Usage period: ${hours} h`))
  }

  if (actions.includes('confirm')) {
    const confirm = actionButton('confirm', 'Confirm assignment', primary === 'confirm')
    confirm.addEventListener('click', handlers.onConfirm)
    card.append(confirm)
  }
  root.append(card)

  if (actions.includes('upload')) {
    root.append(uploadForm(environments, primary === 'upload', handlers))
  }

  if (view.jobs.length > 0) {
    root.append(jobsTable(view, actions, primary, handlers))
  }
}

function uploadForm(
  environments: string[],
  primary: boolean,
  handlers: UserHandlers
): HTMLElement {
  const section = el('section', { class: 'card', 'data-role': 'upload' })
  section.append(el('h3', {}, 'Upload a program bundle'))
  const file = el('input', { type: 'file', 'data-role': 'archive' })
  const select = el('select', { 'data-role': 'environment' })
  for (const name of environments) {
    select.append(el('option', { value: name }, name))
  }
  const button = actionButton('upload', 'Upload', primary)
  button.addEventListener('click', () => {
    const chosen = file.files?.[0]
    if (chosen) {
      handlers.onUpload(chosen, select.value)
    }
  })
  section.append(file, select, button)
  return section
}

function jobsTable(
  view: ApplicationView,
  actions: UserAction[],
  primary: UserAction | undefined,
  handlers: UserHandlers
): HTMLElement {
  const section = el('section', { class: 'card', 'data-role': 'jobs' })
  section.append(el('h3', {}, 'Jobs'))
  const table = el('table')
  let primaryFree = primary === 'download' // only the first download is the CTA
  for (const job of view.jobs) {
    const row = el('tr', { 'data-job': job.job_id })
    row.append(el('td', {}, job.job_id))
    row.append(el('td', {}, job.environment))
    row.append(el('td', { class: `state state-${job.state}` }, job.state))
    const cell = el('td')
    if (actions.includes('execute') && job.state === 'uploaded') {
      const execute = actionButton('execute', 'Execute', false)
      execute.addEventListener('click', () => handlers.onExecute(job.job_id))
      cell.append(execute)
    }
    if (actions.includes('download') && (job.state === 'finished' || job.state === 'failed')) {
      const download = actionButton('download', 'Download results', primaryFree)
      primaryFree = false
      download.addEventListener('click', () => handlers.onDownload(job.job_id))
      cell.append(download)
    }
    row.append(cell)
    table.append(row)
  }
  section.append(table)
  return section
}

/** Endpoints the user bundle is allowed to touch; used by the privacy test. */
export const USER_ENDPOINT_ALLOWLIST = [
  /^\/applications$/,
  /^\/applications\/[^/]+$/,
  /^\/applications\/[^/]+\/confirm$/,
  /^\/applications\/[^/]+\/jobs$/,
  /^\/applications\/[^/]+\/report$/,
  /^\/jobs\/[^/]+$/,
  /^\/jobs\/[^/]+\/execute$/,
  /^\/jobs\/[^/]+\/result$/,
  /^\/cluster$/
]

export class UserFlow {
  constructor(
    private readonly api: GatewayApi,
    readonly appId: string,
    private readonly token: string
  ) {}

  refresh(): Promise<ApplicationView> {
    return this.api.getApplication(this.appId, this.token)
  }

  confirm(): Promise<{ block_id: string; master_node: string }> {
    return this.api.confirm(this.appId, this.token)
  }

  upload(archive: Blob, environment: string): Promise<{ job_id: string }> {
    return this.api.uploadJob(this.appId, this.token, archive, environment)
  }

  execute(jobId: string): Promise<{ state: string }> {
    return this.api.executeJob(jobId, this.token)
  }

  download(jobId: string): Promise<Blob> {
    return this.api.downloadResult(jobId, this.token)
  }
}
