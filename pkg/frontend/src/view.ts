/**
 * Session state kept by the console, independent of any rendering target:
 * newest accepted panel per (problem, frame type) with strict frame-id
 * monotonicity, rolling metric series, and the pending-control ledger.
 */

import {
  AckMessage,
  ControlMessage,
  FrameType,
  MetricsMessage,
  SessionDescriptor,
  WireFrame,
  psnrValue,
} from './protocol.js'

export const METRIC_WINDOW = 300

export type ConnectionState = 'connecting' | 'open' | 'closed'

export interface MetricPoint {
  frameId: number
  value: number // +Infinity encodes the exact-reconstruction sentinel
}

export interface ProblemSeries {
  psnr: MetricPoint[]
  atomsPerPatch: MetricPoint[]
  epochTimeMs: MetricPoint[]
  samplingRatio: MetricPoint[]
}

export interface PendingControl {
  ledgerId: number
  control: ControlMessage
  state: 'pending' | 'applied'
  appliedAtFrame?: number
}

function panelKey(problemId: number, type: number): string {
  return `${problemId}:${type}`
}

export class SessionView {
  connection: ConnectionState = 'connecting'
  descriptor: SessionDescriptor | null = null
  /** newest accepted frame per (problem, type) */
  readonly panels = new Map<string, WireFrame>()
  readonly series = new Map<string, ProblemSeries>()
  readonly ledger: PendingControl[] = []
  /** completed side-by-side renders per problem id */
  readonly pairsRendered = new Map<number, number>()

  private lastFrameId = new Map<string, number>()
  private pairHigh = new Map<number, number>()
  private nextLedgerId = 1

  setConnection(state: ConnectionState): void {
    this.connection = state
  }

  setDescriptor(descriptor: SessionDescriptor): void {
    this.descriptor = descriptor
    for (const problem of descriptor.problems) {
      if (!this.series.has(problem.name)) {
        this.series.set(problem.name, {
          psnr: [],
          atomsPerPatch: [],
          epochTimeMs: [],
          samplingRatio: [],
        })
      }
    }
  }

  problemName(problemId: number): string | null {
    const info = this.descriptor?.problems.find((p) => p.id === problemId)
    return info ? info.name : null
  }

  /**
   * Accept a frame if its id is strictly newer than the last rendered for
   * that (problem, type); stale frames are discarded and leave every
   * counter untouched.
   */
  acceptFrame(frame: WireFrame): boolean {
    const key = panelKey(frame.problemId, frame.type)
    const last = this.lastFrameId.get(key)
    if (last !== undefined && frame.frameId <= last) {
      return false
    }
    this.lastFrameId.set(key, frame.frameId)
    this.panels.set(key, frame)
    this.notePair(frame.problemId)
    return true
  }

  panel(problemId: number, type: number): WireFrame | undefined {
    return this.panels.get(panelKey(problemId, type))
  }

  /** a pair counts once both sides show the same (or newer) frame */
  private notePair(problemId: number): void {
    const masked = this.panels.get(panelKey(problemId, FrameType.MaskedInput))
    const recon = this.panels.get(panelKey(problemId, FrameType.Reconstruction))
    if (!masked || !recon) return
    const pairId = Math.min(masked.frameId, recon.frameId)
    const high = this.pairHigh.get(problemId)
    if (high === undefined || pairId > high) {
      this.pairHigh.set(problemId, pairId)
      this.pairsRendered.set(problemId, (this.pairsRendered.get(problemId) ?? 0) + 1)
    }
  }

  recordMetrics(message: MetricsMessage): void {
    let series = this.series.get(message.problem)
    if (!series) {
      series = { psnr: [], atomsPerPatch: [], epochTimeMs: [], samplingRatio: [] }
      this.series.set(message.problem, series)
    }
    const push = (points: MetricPoint[], value: number | null) => {
      if (value === null) return
      points.push({ frameId: message.frame_id, value })
      if (points.length > METRIC_WINDOW) points.shift()
    }
    push(series.psnr, psnrValue(message.psnr))
    push(series.atomsPerPatch, message.atoms_per_patch)
    push(series.epochTimeMs, message.epoch_time_ms)
    push(series.samplingRatio, message.sampling_ratio)
  }

  /** Record a control as pending before it goes on the wire. */
  registerControl(control: ControlMessage): PendingControl {
    const entry: PendingControl = {
      ledgerId: this.nextLedgerId++,
      control,
      state: 'pending',
    }
    this.ledger.push(entry)
    return entry
  }

  /** Resolve the oldest matching pending entry; returns it, or null. */
  resolveAck(ack: AckMessage): PendingControl | null {
    for (const entry of this.ledger) {
      if (
        entry.state === 'pending' &&
        entry.control.cmd === ack.cmd &&
        entry.control.problem === ack.problem
      ) {
        entry.state = 'applied'
        entry.appliedAtFrame = ack.applied_at_frame
        return entry
      }
    }
    return null
  }

  pendingCount(): number {
    return this.ledger.filter((e) => e.state === 'pending').length
  }
}

/**
 * Latest-wins buffer between the socket and the render loop: memory stays
 * bounded no matter how fast frames arrive, and a drain renders only the
 * newest frame per panel.
 */
export class FrameCoalescer {
  private slots = new Map<string, WireFrame>()

  offer(frame: WireFrame): void {
    this.slots.set(panelKey(frame.problemId, frame.type), frame)
  }

  drain(render: (frame: WireFrame) => void): number {
    let count = 0
    for (const [key, frame] of this.slots) {
      this.slots.delete(key)
      render(frame)
      count += 1
    }
    return count
  }

  get size(): number {
    return this.slots.size
  }
}
