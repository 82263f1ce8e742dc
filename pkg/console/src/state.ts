/**
 * Workflow state tables mirrored from the gateway's state machine.
 *
 * The console derives everything from API responses; these tables only decide
 * which actions are rendered, and the action-safety test pins them to the
 * legal-transition table.
 */

export type ApplicationState =
  | 'submitted'
  | 'approved'
  | 'rejected'
  | 'confirmed'
  | 'active'
  | 'expired'
  | 'closed'

export type WorkflowEvent = 'approve' | 'reject' | 'confirm' | 'activate' | 'expire' | 'close'

export type JobState = 'uploaded' | 'running' | 'finished' | 'failed'

/** Mirror of the gateway's legal-transition table. */
export const LEGAL_EVENTS: Record<ApplicationState, WorkflowEvent[]> = {
  submitted: ['approve', 'reject'],
  approved: ['confirm', 'reject'],
  rejected: [],
  confirmed: ['activate'],
  active: ['expire'],
  expired: ['close'],
  closed: []
}

/** Events a user (not the admin or the automation) may trigger. */
export const USER_EVENTS: WorkflowEvent[] = ['confirm']

export type UserAction = 'confirm' | 'upload' | 'execute' | 'download'

/**
 * Action buttons the user flow renders per application state. Job-scoped
 * actions (execute, download) render only when a job in the right state
 * exists; upload renders whenever the block is live.
 */
export const RENDERED_ACTIONS: Record<ApplicationState, UserAction[]> = {
  submitted: [],
  approved: ['confirm'],
  rejected: [],
  confirmed: [],
  active: ['upload', 'execute', 'download'],
  expired: ['download'],
  closed: ['download']
}

/** The one call-to-action highlighted for a state (none while waiting). */
export const PRIMARY_ACTION: Partial<Record<ApplicationState, UserAction>> = {
  approved: 'confirm',
  active: 'upload',
  expired: 'download',
  closed: 'download'
}

export function userWorkflowEvents(state: ApplicationState): WorkflowEvent[] {
  return LEGAL_EVENTS[state].filter((event) => USER_EVENTS.includes(event))
}

export interface JobView {
  job_id: string
  state: JobState
  environment: string
  started_at: number | null
  finished_at: number | null
}

export interface ApplicationView {
  app_id: string
  state: ApplicationState
  nodes_requested: number
  assignment: string[]
  period: [number, number] | null
  block_id?: string
  master_node?: string
  jobs: JobView[]
}

/**
 * Concrete actions to render for a view: the state table, narrowed by which
 * jobs actually exist (no execute button without an uploaded job, no download
 * without a finished or failed one).
 */
export function renderedActions(view: ApplicationView): UserAction[] {
  return RENDERED_ACTIONS[view.state].filter((action) => {
    if (action === 'execute') {
      return view.jobs.some((job) => job.state === 'uploaded')
    }
    if (action === 'download') {
      return view.jobs.some((job) => job.state === 'finished' || job.state === 'failed')
    }
    return true
  })
}

export const STATE_HINTS: Record<ApplicationState, string> = {
  submitted: 'Waiting for the administrator to review this application.',
  approved: 'Nodes are assigned. Confirm to accept the assignment and start the usage period.',
  rejected: 'This application was rejected. You may submit a new one.',
  confirmed: 'Assignment confirmed; nodes are powering on.',
  active: 'Your block is live. Upload a program bundle and execute it.',
  expired: 'The usage period is over and the nodes were switched off. Results stay downloadable.',
  closed: 'This application is closed.'
}
