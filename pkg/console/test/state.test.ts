/**
 * Action-safety: for every application state, the rendered action set equals
 * the state table, and user-triggerable workflow actions match the mirrored
 * legal-transition table. Runs against a mock API; no gateway needed.
 */

import { describe, expect, it } from 'vitest'

import {
  ApplicationState,
  ApplicationView,
  JobView,
  LEGAL_EVENTS,
  PRIMARY_ACTION,
  RENDERED_ACTIONS,
  renderedActions,
  userWorkflowEvents
} from '../src/state.js'
import { renderUserView } from '../src/user.js'

const ALL_STATES: ApplicationState[] = [
  'submitted',
  'approved',
  'rejected',
  'confirmed',
  'active',
  'expired',
  'closed'
]

const ASSIGNED_STATES: ApplicationState[] = ['approved', 'confirmed', 'active', 'expired', 'closed']

function viewFor(state: ApplicationState, jobs: JobView[] = []): ApplicationView {
  const assigned = ASSIGNED_STATES.includes(state)
  return {
    app_id: 'app-0001',
    state,
    nodes_requested: 3,
    assignment: assigned ? ['n00', 'n01', 'n02'] : [],
    period: assigned ? [0, 48 * 3600] : null,
    jobs
  }
}

/** One job in every lifecycle state, so every action gate can fire. */
const FULL_JOBS: JobView[] = (['uploaded', 'running', 'finished', 'failed'] as const).map(
  (state, index) => ({
    job_id: `job-${index}`,
    state,
    environment: 'mpich2',
    started_at: state === 'uploaded' ? null : 10,
    finished_at: state === 'finished' || state === 'failed' ? 20 : null
  })
)

function renderedActionSet(view: ApplicationView): Set<string> {
  const root = document.createElement('div')
  renderUserView(root, view, ['mpich1', 'mpich2'], {
    onConfirm: () => undefined,
    onUpload: () => undefined,
    onExecute: () => undefined,
    onDownload: () => undefined
  })
  return new Set(
    Array.from(root.querySelectorAll('[data-action]')).map(
      (node) => node.getAttribute('data-action') ?? ''
    )
  )
}

describe('action table mirrors the workflow machine', () => {
  it.each(ALL_STATES)('%s: confirm renders iff the transition is legal', (state) => {
    const legalUserEvents = userWorkflowEvents(state)
    const confirmLegal = legalUserEvents.includes('confirm')
    expect(RENDERED_ACTIONS[state].includes('confirm')).toBe(confirmLegal)
  })

  it('only approved offers any user workflow transition', () => {
    for (const state of ALL_STATES) {
      expect(userWorkflowEvents(state)).toEqual(state === 'approved' ? ['confirm'] : [])
    }
  })

  it('terminal machine states render no mutating workflow action', () => {
    for (const state of ['rejected', 'closed'] as ApplicationState[]) {
      expect(LEGAL_EVENTS[state]).toEqual([])
      expect(RENDERED_ACTIONS[state].filter((a) => a === 'confirm' || a === 'upload')).toEqual([])
    }
  })
})

describe('rendered DOM equals the state table', () => {
  it.each(ALL_STATES)('%s with a full job ledger', (state) => {
    const view = viewFor(state, FULL_JOBS)
    expect(renderedActionSet(view)).toEqual(new Set(renderedActions(view)))
    expect(renderedActions(view)).toEqual(RENDERED_ACTIONS[state])
  })

  it.each(ALL_STATES)('%s with no jobs: job-gated actions disappear', (state) => {
    const view = viewFor(state, [])
    const expected = RENDERED_ACTIONS[state].filter((a) => a !== 'execute' && a !== 'download')
    expect(renderedActionSet(view)).toEqual(new Set(expected))
  })

  it.each(ALL_STATES)('%s renders at most one primary call-to-action', (state) => {
    const view = viewFor(state, FULL_JOBS)
    const root = document.createElement('div')
    renderUserView(root, view, ['mpich2'], {
      onConfirm: () => undefined,
      onUpload: () => undefined,
      onExecute: () => undefined,
      onDownload: () => undefined
    })
    const primaries = root.querySelectorAll('button.primary')
    expect(primaries.length).toBeLessThanOrEqual(1)
    const expected = PRIMARY_ACTION[state]
    if (expected && renderedActions(view).includes(expected)) {
      expect(primaries[0]?.getAttribute('data-action')).toBe(expected)
    }
  })

  it('illegal actions are not rendered anywhere', () => {
    for (const state of ALL_STATES) {
      const set = renderedActionSet(viewFor(state, FULL_JOBS))
      if (state !== 'approved') {
        expect(set.has('confirm')).toBe(false)
      }
      if (state !== 'active') {
        expect(set.has('upload')).toBe(false)
        expect(set.has('execute')).toBe(false)
      }
    }
  })
})
