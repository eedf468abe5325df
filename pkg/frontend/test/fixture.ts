/**
 * Canned-session fixture server: replays a deterministic stream of panel
 * frames and metrics over a real websocket and acks controls the way the
 * live endpoint does (applied_at_frame = frame in flight + 1).
 */

import { AddressInfo } from 'node:net'
import { WebSocketServer } from 'ws'

import { FrameType, WireFrame, encodeWireFrame } from '../src/protocol.js'

export interface FixtureOptions {
  frames?: number
  intervalMs?: number
  infFrame?: number // frame whose metrics carry the "inf" sentinel
  size?: number
  staleAfter?: number // after this frame, re-send frame 0 (stale) once
}

export interface FixtureServer {
  port: number
  url: string
  receivedControls: Array<Record<string, unknown>>
  close(): Promise<void>
}

function panel(size: number, frameId: number, slope: number): Uint8Array {
  const out = new Uint8Array(size * size)
  for (let i = 0; i < out.length; i++) {
    out[i] = (frameId * slope + i) % 256
  }
  return out
}

export function startFixture(options: FixtureOptions = {}): Promise<FixtureServer> {
  const frames = options.frames ?? 12
  const intervalMs = options.intervalMs ?? 5
  const infFrame = options.infFrame ?? 5
  const size = options.size ?? 8
  const receivedControls: Array<Record<string, unknown>> = []

  const server = new WebSocketServer({ host: '127.0.0.1', port: 0 })
  const timers = new Set<ReturnType<typeof setInterval>>()

  server.on('connection', (socket) => {
    let frameId = 0
    socket.send(JSON.stringify({
      kind: 'session',
      problems: [{
        name: 'demo', id: 0, shape: [size, size], num_atoms: 4, patch: [4, 4],
        sampling_ratio: 0.3, strategy: 'uniform-random', epochs_per_frame: 1,
        freeze_dict: false, paused: false, frames_processed: 0,
      }],
      strategies: ['uniform-random', 'stratified'],
      dropped_frames: 0,
    }))

    socket.on('message', (data, isBinary) => {
      if (isBinary) return
      const control = JSON.parse(data.toString()) as Record<string, unknown>
      receivedControls.push(control)
      if (control.cmd === 'bad_cmd') {
        socket.send(JSON.stringify({ kind: 'error', message: 'unknown cmd' }))
        return
      }
      socket.send(JSON.stringify({
        kind: 'ack',
        cmd: control.cmd,
        problem: control.problem,
        applied_at_frame: frameId + 1,
      }))
    })

    const sendFrame = (id: number) => {
      const wire = (type: WireFrame['type'], slope: number) =>
        encodeWireFrame({
          type, problemId: 0, width: size, height: size, frameId: id,
          payload: panel(size, id, slope),
        })
      socket.send(wire(FrameType.MaskedInput, 3))
      socket.send(wire(FrameType.Reconstruction, 5))
      socket.send(wire(FrameType.DictionaryAtlas, 7))
      socket.send(JSON.stringify({
        kind: 'metrics', problem: 'demo', frame_id: id,
        psnr: id === infFrame ? 'inf' : 18 + id * 0.5,
        mse: 0.01 / (id + 1), sampling_ratio: 0.3,
        atoms_per_patch: 2 + (id % 3) * 0.25,
        epoch_time_ms: 10 + id, epochs_run: id + 1,
      }))
    }

    const timer = setInterval(() => {
      if (socket.readyState !== socket.OPEN) {
        clearInterval(timer)
        timers.delete(timer)
        return
      }
      if (frameId < frames) {
        sendFrame(frameId)
        if (options.staleAfter !== undefined && frameId === options.staleAfter) {
          sendFrame(0) // deliberately stale; viewers must discard it
        }
        frameId += 1
      }
    }, intervalMs)
    timers.add(timer)
    socket.on('close', () => {
      clearInterval(timer)
      timers.delete(timer)
    })
  })

  return new Promise((resolve) => {
    server.on('listening', () => {
      const port = (server.address() as AddressInfo).port
      resolve({
        port,
        url: `ws://127.0.0.1:${port}`,
        receivedControls,
        close: () =>
          new Promise<void>((done) => {
            for (const timer of timers) clearInterval(timer)
            for (const client of server.clients) client.terminate()
            server.close(() => done())
          }),
      })
    })
  })
}
