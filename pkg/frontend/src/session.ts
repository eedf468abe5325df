/**
 * Socket layer: connects to the stream endpoint, decodes traffic into
 * typed events, sends controls, and reconnects with exponential backoff.
 * The WebSocket constructor is injectable so tests can drive the client
 * from node.
 */

import {
  ControlMessage,
  ServerMessage,
  WireFrame,
  decodeWireFrame,
  encodeControl,
  parseServerMessage,
} from './protocol.js'

export interface SocketLike {
  binaryType: string
  onopen: ((ev?: unknown) => void) | null
  onmessage: ((ev: { data: unknown }) => void) | null
  onclose: ((ev?: unknown) => void) | null
  onerror: ((ev?: unknown) => void) | null
  send(data: string): void
  close(): void
}

export type SocketFactory = (url: string) => SocketLike

export interface SessionEvents {
  onFrame?: (frame: WireFrame) => void
  onMessage?: (message: ServerMessage) => void
  onState?: (state: 'connecting' | 'open' | 'closed') => void
  onDecodeError?: (error: Error) => void
}

const INITIAL_BACKOFF_MS = 500
const MAX_BACKOFF_MS = 10_000

export class SessionClient {
  private socket: SocketLike | null = null
  private backoffMs = INITIAL_BACKOFF_MS
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null
  private closed = false

  constructor(
    private readonly url: string,
    private readonly events: SessionEvents,
    private readonly factory: SocketFactory,
    private readonly reconnect = true,
  ) {}

  connect(): void {
    this.closed = false
    this.open()
  }

  private open(): void {
    this.events.onState?.('connecting')
    const socket = this.factory(this.url)
    socket.binaryType = 'arraybuffer'
    this.socket = socket

    socket.onopen = () => {
      this.backoffMs = INITIAL_BACKOFF_MS
      this.events.onState?.('open')
    }
    socket.onmessage = (event) => this.handleMessage(event.data)
    socket.onerror = () => {
      // the close handler owns reconnection; errors always precede a close
    }
    socket.onclose = () => {
      this.events.onState?.('closed')
      this.socket = null
      if (!this.closed && this.reconnect) {
        this.scheduleReconnect()
      }
    }
  }

  private scheduleReconnect(): void {
    if (this.reconnectTimer !== null) return
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null
      if (!this.closed) this.open()
    }, this.backoffMs)
    this.backoffMs = Math.min(this.backoffMs * 2, MAX_BACKOFF_MS)
  }

  private handleMessage(data: unknown): void {
    try {
      if (typeof data === 'string') {
        this.events.onMessage?.(parseServerMessage(data))
      } else if (data instanceof ArrayBuffer) {
        this.events.onFrame?.(decodeWireFrame(data))
      } else if (ArrayBuffer.isView(data)) {
        const view = data as ArrayBufferView
        const copy = view.buffer.slice(view.byteOffset, view.byteOffset + view.byteLength)
        this.events.onFrame?.(decodeWireFrame(copy as ArrayBuffer))
      } else {
        throw new Error(`unexpected message payload ${Object.prototype.toString.call(data)}`)
      }
    } catch (error) {
      this.events.onDecodeError?.(error as Error)
    }
  }

  /** Send a control; returns false when the socket is not open. */
  sendControl(control: ControlMessage): boolean {
    if (!this.socket) return false
    try {
      this.socket.send(encodeControl(control))
      return true
    } catch {
      return false
    }
  }

  close(): void {
    this.closed = true
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer)
      this.reconnectTimer = null
    }
    this.socket?.close()
    this.socket = null
  }
}
