/**
 * Entry point: hash routing between the user and admin flows, with polling at
 * the sentinel tick interval (no push channels; the gateway declines them).
 */

import { ApiFailure, GatewayApi } from './api.js'
import { AdminFlow, renderFanoutConsole, renderLockout, renderPendingQueue, renderSnapshot } from './admin.js'
import { renderError, renderUserView, UserFlow } from './user.js'
import type { AllocationPreview, FanoutEnvelope } from './api.js'

const api = new GatewayApi('')
let pollTimer: number | undefined

function root(): HTMLElement {
  return document.getElementById('app') as HTMLElement
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

async function schedulePoll(render: () => Promise<void>): Promise<void> {
  if (pollTimer !== undefined) {
    clearInterval(pollTimer)
  }
  let tickSeconds = 5
  try {
    tickSeconds = (await api.snapshot()).tick_seconds
  } catch {
    /* gateway briefly unreachable; keep the default cadence */
  }
  pollTimer = setInterval(render, tickSeconds * 1000) as unknown as number
}

// -- user flow --------------------------------------------------------------

function renderLogin(): void {
  const container = root()
  container.replaceChildren()
  const card = el('section', { class: 'card' })
  card.append(el('h2', {}, 'Enter your access credentials'))
  card.append(
    el('p', { class: 'hint' }, 'The application id and token were issued when your request was approved.')
  )
  const appId = el('input', { placeholder: 'app-…', 'data-role': 'app-id' })
  const token = el('input', { placeholder: 'access token', type: 'password', 'data-role': 'token' })
  const go = el('button', { class: 'primary' }, 'Open workspace')
  go.addEventListener('click', () => {
    sessionStorage.setItem('app_id', appId.value.trim())
    sessionStorage.setItem('token', token.value.trim())
    void renderUser()
  })
  card.append(appId, token, go)

  const registerCard = el('section', { class: 'card' })
  registerCard.append(el('h2', {}, 'or register a new application'))
  const name = el('input', { placeholder: 'name', 'data-role': 'name' })
  const contact = el('input', { placeholder: 'contact', 'data-role': 'contact' })
  const description = el('textarea', { placeholder: 'what will you compute?', 'data-role': 'description' })
  const nodes = el('input', { type: 'number', value: '2', min: '1', 'data-role': 'nodes' })
  const submit = el('button', {}, 'Submit registration')
  submit.addEventListener('click', async () => {
    try {
      const created = await api.register({
        name: name.value,
        contact: contact.value,
        job_description: description.value,
        nodes_requested: Number(nodes.value)
      })
      registerCard.append(
        el('p', { 'data-role': 'registered' }, `Submitted: ${created.app_id}. Await admin approval.`)
      )
    } catch (failure) {
      renderError(registerCard, failure)
    }
  })
  registerCard.append(name, contact, description, nodes, submit)
  container.append(card, registerCard)
}

async function renderUser(): Promise<void> {
  const appId = sessionStorage.getItem('app_id')
  const token = sessionStorage.getItem('token')
  if (!appId || !token) {
    renderLogin()
    return
  }
  const flow = new UserFlow(api, appId, token)
  const container = root()
  try {
    const [view, snapshot] = await Promise.all([flow.refresh(), api.snapshot()])
    renderUserView(container, view, snapshot.environments, {
      onConfirm: () => void flow.confirm().then(renderUser, (f) => renderError(container, f)),
      onUpload: (archive, environment) =>
        void flow.upload(archive, environment).then(renderUser, (f) => renderError(container, f)),
      onExecute: (jobId) =>
        void flow.execute(jobId).then(renderUser, (f) => renderError(container, f)),
      onDownload: (jobId) =>
        void flow.download(jobId).then((blob) => {
          const url = URL.createObjectURL(blob)
          const link = el('a', { href: url, download: `${jobId}-results.tar` })
          document.body.append(link)
          link.click()
          link.remove()
        })
    })
  } catch (failure) {
    if (failure instanceof ApiFailure && failure.status === 401) {
      sessionStorage.removeItem('token')
      renderLogin()
      return
    }
    renderError(container, failure)
  }
  await schedulePoll(renderUser)
}

// -- admin flow ----------------------------------------------------------------

const previews = new Map<string, AllocationPreview>()
let fanoutResults: FanoutEnvelope[] = []
let reviewError: ApiFailure | null = null

async function renderAdmin(): Promise<void> {
  const secret = sessionStorage.getItem('admin_secret')
  const container = root()
  if (!secret) {
    container.replaceChildren()
    const card = el('section', { class: 'card' })
    card.append(el('h2', {}, 'Admin secret'))
    const input = el('input', { type: 'password', 'data-role': 'secret' })
    const go = el('button', { class: 'primary' }, 'Unlock')
    go.addEventListener('click', () => {
      sessionStorage.setItem('admin_secret', input.value)
      void renderAdmin()
    })
    card.append(input, go)
    container.append(card)
    return
  }
  const flow = new AdminFlow(api, secret)
  try {
    const [pending, snapshot] = await Promise.all([flow.pending(), flow.snapshot()])
    container.replaceChildren()
    renderPendingQueue(container, pending, previews, reviewError, {
      onPreview: (appId, nodes) =>
        void flow.preview(appId, nodes).then((preview) => {
          previews.set(appId, preview)
          reviewError = null
          void renderAdmin()
        }, handleReviewFailure),
      onApprove: (appId, nodes, hours) =>
        void flow.approve(appId, nodes, hours).then(() => {
          reviewError = null
          void renderAdmin()
        }, handleReviewFailure),
      onReject: (appId) =>
        void flow.reject(appId).then(() => void renderAdmin(), handleReviewFailure),
      onFanout: () => undefined
    })
    renderSnapshot(container, snapshot)
    renderFanoutConsole(container, fanoutResults, {
      onPreview: () => undefined,
      onApprove: () => undefined,
      onReject: () => undefined,
      onFanout: (selector, command) =>
        void flow.fanout(selector, command).then((envelopes) => {
          fanoutResults = envelopes
          void renderAdmin()
        }, handleReviewFailure)
    })
  } catch (failure) {
    if (failure instanceof ApiFailure && failure.status === 401) {
      sessionStorage.removeItem('admin_secret')
      renderLockout(container)
      return
    }
    renderError(container, failure)
  }
  await schedulePoll(renderAdmin)
}

function handleReviewFailure(failure: unknown): void {
  reviewError = failure instanceof ApiFailure ? failure : new ApiFailure(0, 'client', String(failure))
  void renderAdmin()
}

// -- routing -----------------------------------------------------------------------

function route(): void {
  if (location.hash.startsWith('#/admin')) {
    void renderAdmin()
  } else {
    void renderUser()
  }
}

window.addEventListener('hashchange', route)
window.addEventListener('DOMContentLoaded', route)
