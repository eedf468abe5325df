/**
 * Browser entry point: builds the console layout (side-by-side masked
 * input and reconstruction per problem, dictionary atlas and metric plots
 * below, control strip), wires the socket client to the session view, and
 * renders coalesced frames once per display refresh.
 */

import {
  AckMessage,
  ControlMessage,
  ErrorMessage,
  FrameType,
  MetricsMessage,
  SessionDescriptor,
} from './protocol.js'
import { CanvasSurface, Palette, drawChart } from './render.js'
import { SessionClient, SocketLike } from './session.js'
import { FrameCoalescer, SessionView } from './view.js'

const PANEL_TYPES = [
  { type: FrameType.MaskedInput, label: 'masked input' },
  { type: FrameType.Reconstruction, label: 'reconstruction' },
  { type: FrameType.GroundTruth, label: 'ground truth' },
  { type: FrameType.DictionaryAtlas, label: 'dictionary' },
] as const

interface ProblemWidgets {
  surfaces: Map<number, CanvasSurface>
  charts: { psnr: HTMLCanvasElement; atoms: HTMLCanvasElement; epoch: HTMLCanvasElement }
  ratioSlider: HTMLInputElement
  ratioValue: HTMLSpanElement
  epochsSlider: HTMLInputElement
  epochsValue: HTMLSpanElement
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  parent: Element,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  parent.appendChild(node)
  return node
}

class Console {
  private readonly view = new SessionView()
  private readonly coalescer = new FrameCoalescer()
  private readonly client: SessionClient
  private readonly widgets = new Map<string, ProblemWidgets>()
  private palette: Palette = 'grey'
  private rafPending = false

  private readonly root: HTMLElement
  private readonly statusBadge: HTMLElement
  private readonly problemsBox: HTMLElement
  private readonly ledgerBox: HTMLElement
  private readonly toastBox: HTMLElement

  constructor(url: string) {
    this.root = document.getElementById('app') ?? document.body
    const bar = el('div', this.root, 'topbar')
    el('span', bar, 'title', 'patchbeam console')
    this.statusBadge = el('span', bar, 'status connecting', 'connecting')
    const paletteButton = el('button', bar, 'palette', 'false color')
    paletteButton.onclick = () => {
      this.palette = this.palette === 'grey' ? 'false' : 'grey'
      paletteButton.classList.toggle('active', this.palette === 'false')
      this.redrawAll()
    }
    this.problemsBox = el('div', this.root, 'problems')
    this.ledgerBox = el('div', this.root, 'ledger')
    this.toastBox = el('div', this.root, 'toasts')

    this.client = new SessionClient(
      url,
      {
        onState: (state) => {
          this.view.setConnection(state)
          this.statusBadge.textContent = state
          this.statusBadge.className = `status ${state}`
          const stale = state !== 'open'
          for (const w of this.widgets.values()) {
            for (const surface of w.surfaces.values()) surface.setStale(stale)
          }
        },
        onFrame: (frame) => {
          this.coalescer.offer(frame)
          this.scheduleRender()
        },
        onMessage: (message) => {
          switch (message.kind) {
            case 'session':
              this.view.setDescriptor(message)
              this.buildProblemWidgets(message)
              break
            case 'metrics':
              this.view.recordMetrics(message)
              this.drawCharts(message)
              break
            case 'ack':
              this.onAck(message)
              break
            case 'error':
              this.toast((message as ErrorMessage).message)
              break
          }
        },
        onDecodeError: (error) => this.toast(`decode error: ${error.message}`),
      },
      (wsUrl) => new WebSocket(wsUrl) as unknown as SocketLike,
    )
  }

  start(): void {
    this.client.connect()
  }

  private scheduleRender(): void {
    if (this.rafPending) return
    this.rafPending = true
    requestAnimationFrame(() => {
      this.rafPending = false
      this.coalescer.drain((frame) => {
        if (!this.view.acceptFrame(frame)) return
        const name = this.view.problemName(frame.problemId)
        const widget = name ? this.widgets.get(name) : undefined
        widget?.surfaces.get(frame.type)?.drawFrame(frame, this.palette)
      })
    })
  }

  private redrawAll(): void {
    for (const frame of this.view.panels.values()) {
      const name = this.view.problemName(frame.problemId)
      const widget = name ? this.widgets.get(name) : undefined
      widget?.surfaces.get(frame.type)?.drawFrame(frame, this.palette)
    }
  }

  private buildProblemWidgets(descriptor: SessionDescriptor): void {
    for (const problem of descriptor.problems) {
      if (this.widgets.has(problem.name)) continue
      const box = el('section', this.problemsBox, 'problem')
      el('h2', box, undefined, problem.name)

      const row = el('div', box, 'panel-row')
      const surfaces = new Map<number, CanvasSurface>()
      for (const { type, label } of PANEL_TYPES) {
        const cell = el('figure', row, 'panel')
        const canvas = el('canvas', cell)
        el('figcaption', cell, undefined, label)
        surfaces.set(type, new CanvasSurface(canvas))
      }

      const plots = el('div', box, 'plot-row')
      const charts = {
        psnr: el('canvas', plots, 'chart'),
        atoms: el('canvas', plots, 'chart'),
        epoch: el('canvas', plots, 'chart'),
      }
      for (const canvas of Object.values(charts)) {
        canvas.width = 280
        canvas.height = 90
      }

      const controls = el('div', box, 'controls')
      const ratioSlider = el('input', controls) as HTMLInputElement
      ratioSlider.type = 'range'
      ratioSlider.min = '0.01'
      ratioSlider.max = '1.0'
      ratioSlider.step = '0.01'
      ratioSlider.value = String(problem.sampling_ratio)
      const ratioValue = el('span', controls, 'value', ratioSlider.value)
      el('label', controls, undefined, 'sampling ratio')
      ratioSlider.oninput = () => {
        ratioValue.textContent = ratioSlider.value
      }
      ratioSlider.onchange = () =>
        this.sendControl({
          cmd: 'set_sampling',
          problem: problem.name,
          value: Number(ratioSlider.value),
        })

      const epochsSlider = el('input', controls) as HTMLInputElement
      epochsSlider.type = 'range'
      epochsSlider.min = '1'
      epochsSlider.max = '50'
      epochsSlider.step = '1'
      epochsSlider.value = String(problem.epochs_per_frame)
      const epochsValue = el('span', controls, 'value', epochsSlider.value)
      el('label', controls, undefined, 'epochs/frame')
      epochsSlider.oninput = () => {
        epochsValue.textContent = epochsSlider.value
      }
      epochsSlider.onchange = () =>
        this.sendControl({
          cmd: 'set_epochs',
          problem: problem.name,
          value: Number(epochsSlider.value),
        })

      const pauseButton = el('button', controls, undefined, 'pause')
      pauseButton.onclick = () =>
        this.sendControl({ cmd: 'pause', problem: problem.name })
      const resumeButton = el('button', controls, undefined, 'resume')
      resumeButton.onclick = () =>
        this.sendControl({ cmd: 'resume', problem: problem.name })

      const transferPicker = el('select', controls) as HTMLSelectElement
      for (const other of descriptor.problems) {
        if (other.name === problem.name) continue
        const option = document.createElement('option')
        option.value = other.name
        option.textContent = `from ${other.name}`
        transferPicker.appendChild(option)
      }
      const transferButton = el('button', controls, undefined, 'transfer dict')
      transferButton.disabled = transferPicker.options.length === 0
      transferButton.onclick = () => {
        if (transferPicker.value) {
          this.sendControl({
            cmd: 'transfer_dict',
            problem: problem.name,
            value: transferPicker.value,
          })
        }
      }

      this.widgets.set(problem.name, {
        surfaces,
        charts,
        ratioSlider,
        ratioValue,
        epochsSlider,
        epochsValue,
      })
    }
  }

  /** pending entries always render before the control leaves the client */
  private sendControl(control: ControlMessage): void {
    const entry = this.view.registerControl(control)
    this.renderLedger()
    if (!this.client.sendControl(control)) {
      this.toast('not connected; control not sent')
    }
    void entry
  }

  private onAck(ack: AckMessage): void {
    const entry = this.view.resolveAck(ack)
    if (!entry) {
      this.toast(`unmatched ack for ${ack.cmd}`)
    }
    this.renderLedger()
  }

  private renderLedger(): void {
    this.ledgerBox.textContent = ''
    const recent = this.view.ledger.slice(-8)
    for (const entry of recent) {
      const line = el('div', this.ledgerBox, `control ${entry.state}`)
      const value = entry.control.value !== undefined ? ` = ${entry.control.value}` : ''
      const status =
        entry.state === 'pending'
          ? 'pending…'
          : `applied at frame ${entry.appliedAtFrame}`
      line.textContent = `${entry.control.problem}: ${entry.control.cmd}${value} — ${status}`
    }
  }

  private drawCharts(message: MetricsMessage): void {
    const widget = this.widgets.get(message.problem)
    const series = this.view.series.get(message.problem)
    if (!widget || !series) return
    drawChart(widget.charts.psnr, series.psnr, '#6cf', 'PSNR dB')
    drawChart(widget.charts.atoms, series.atomsPerPatch, '#fc6', 'atoms/patch')
    drawChart(widget.charts.epoch, series.epochTimeMs, '#9f9', 'epoch ms')
  }

  private toast(message: string): void {
    const node = el('div', this.toastBox, 'toast', message)
    setTimeout(() => node.remove(), 4000)
  }
}

function defaultUrl(): string {
  const params = new URLSearchParams(window.location.search)
  const fromQuery = params.get('url')
  if (fromQuery) return fromQuery
  const host = window.location.hostname || '127.0.0.1'
  return `ws://${host}:8765`
}

if (typeof document !== 'undefined' && typeof window !== 'undefined') {
  const form = document.getElementById('connect-form')
  const input = document.getElementById('connect-url') as HTMLInputElement | null
  if (form && input) {
    input.value = defaultUrl()
    form.addEventListener('submit', (event) => {
      event.preventDefault()
      form.remove()
      new Console(input.value).start()
    })
  } else {
    new Console(defaultUrl()).start()
  }
}
