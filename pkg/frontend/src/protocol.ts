/**
 * Wire protocol for the live reconstruction stream.
 *
 * Binary frames carry one uint8 panel behind a 20-byte little-endian
 * header; text messages are JSON (session descriptor, metrics, acks,
 * errors going down; controls going up).
 */

export const FrameType = {
  MaskedInput: 0,
  Reconstruction: 1,
  DictionaryAtlas: 2,
  GroundTruth: 3,
} as const

export type FrameTypeValue = (typeof FrameType)[keyof typeof FrameType]

export const HEADER_BYTES = 20
const DTYPE_U8 = 1

export interface WireFrame {
  type: FrameTypeValue
  problemId: number
  width: number
  height: number
  frameId: number
  payload: Uint8Array
}

export function decodeWireFrame(buffer: ArrayBuffer): WireFrame {
  if (buffer.byteLength < HEADER_BYTES) {
    throw new Error(`wire frame shorter than header (${buffer.byteLength} bytes)`)
  }
  const view = new DataView(buffer)
  const type = view.getUint8(0) as FrameTypeValue
  const dtype = view.getUint8(1)
  if (dtype !== DTYPE_U8) {
    throw new Error(`unknown wire dtype ${dtype}`)
  }
  const problemId = view.getUint16(2, true)
  const width = view.getUint32(4, true)
  const height = view.getUint32(8, true)
  const frameId = view.getUint32(12, true)
  const payload = new Uint8Array(buffer, HEADER_BYTES)
  if (payload.length !== width * height) {
    throw new Error(`payload is ${payload.length} bytes, expected ${width * height}`)
  }
  return { type, problemId, width, height, frameId, payload }
}

export function encodeWireFrame(frame: WireFrame): ArrayBuffer {
  const buffer = new ArrayBuffer(HEADER_BYTES + frame.payload.length)
  const view = new DataView(buffer)
  view.setUint8(0, frame.type)
  view.setUint8(1, DTYPE_U8)
  view.setUint16(2, frame.problemId, true)
  view.setUint32(4, frame.width, true)
  view.setUint32(8, frame.height, true)
  view.setUint32(12, frame.frameId, true)
  view.setUint32(16, 0, true)
  new Uint8Array(buffer, HEADER_BYTES).set(frame.payload)
  return buffer
}

export interface ProblemInfo {
  name: string
  id: number
  shape: number[] | null
  num_atoms: number
  patch: number[]
  sampling_ratio: number
  strategy: string
  epochs_per_frame: number
  freeze_dict: boolean
  paused: boolean
  frames_processed: number
}

export interface SessionDescriptor {
  kind: 'session'
  problems: ProblemInfo[]
  strategies: string[]
  dropped_frames: number
}

export interface MetricsMessage {
  kind: 'metrics'
  problem: string
  frame_id: number
  psnr: number | 'inf' | null
  mse: number | null
  sampling_ratio: number
  atoms_per_patch: number
  epoch_time_ms: number
  epochs_run: number
}

export interface AckMessage {
  kind: 'ack'
  cmd: string
  problem: string
  applied_at_frame: number
}

export interface ErrorMessage {
  kind: 'error'
  message: string
}

export type ServerMessage = SessionDescriptor | MetricsMessage | AckMessage | ErrorMessage

export function parseServerMessage(text: string): ServerMessage {
  const decoded = JSON.parse(text) as { kind?: string }
  switch (decoded.kind) {
    case 'session':
    case 'metrics':
    case 'ack':
    case 'error':
      return decoded as ServerMessage
    default:
      throw new Error(`unknown server message kind ${String(decoded.kind)}`)
  }
}

export type ControlCommand =
  | 'set_sampling'
  | 'set_epochs'
  | 'pause'
  | 'resume'
  | 'transfer_dict'
  | 'set_strategy'

export interface ControlMessage {
  cmd: ControlCommand
  problem: string
  value?: number | string
}

export function encodeControl(control: ControlMessage): string {
  return JSON.stringify(control)
}

/** Numeric PSNR for plotting; the "inf" sentinel maps to +Infinity. */
export function psnrValue(psnr: MetricsMessage['psnr']): number | null {
  if (psnr === null || psnr === undefined) return null
  if (psnr === 'inf') return Number.POSITIVE_INFINITY
  return psnr
}
