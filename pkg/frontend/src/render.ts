/**
 * Pixel rendering: raw uint8 panels are blitted straight into canvases
 * (no per-pixel DOM), greyscale by default with a false-color toggle.
 * Chart geometry is computed by pure functions so the plotting rules
 * (including the "inf" top-of-axis marker) are testable off-screen.
 */

import { WireFrame } from './protocol.js'
import { MetricPoint } from './view.js'

export type Palette = 'grey' | 'false'

export interface PanelSurface {
  drawFrame(frame: WireFrame, palette: Palette): void
  setStale(stale: boolean): void
}

/** Cheap blue-to-red heat ramp for the false-color toggle. */
export function falseColor(value: number): [number, number, number] {
  const t = value / 255
  const r = Math.round(255 * Math.min(1, Math.max(0, 1.5 * t - 0.25)))
  const g = Math.round(255 * Math.min(1, Math.max(0, 1.7 * (1 - Math.abs(t - 0.5) * 2) )))
  const b = Math.round(255 * Math.min(1, Math.max(0, 1.25 - 1.5 * t)))
  return [r, g, b]
}

export function panelToRgba(frame: WireFrame, palette: Palette): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(frame.width * frame.height * 4))
  for (let i = 0; i < frame.payload.length; i++) {
    const v = frame.payload[i] ?? 0
    let r = v
    let g = v
    let b = v
    if (palette === 'false') {
      ;[r, g, b] = falseColor(v)
    }
    out[i * 4] = r
    out[i * 4 + 1] = g
    out[i * 4 + 2] = b
    out[i * 4 + 3] = 255
  }
  return out
}

export class CanvasSurface implements PanelSurface {
  private readonly ctx: CanvasRenderingContext2D

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext('2d')
    if (!ctx) throw new Error('2D canvas context unavailable')
    this.ctx = ctx
  }

  drawFrame(frame: WireFrame, palette: Palette): void {
    if (this.canvas.width !== frame.width || this.canvas.height !== frame.height) {
      this.canvas.width = frame.width
      this.canvas.height = frame.height
    }
    const image = new ImageData(panelToRgba(frame, palette), frame.width, frame.height)
    this.ctx.putImageData(image, 0, 0)
  }

  setStale(stale: boolean): void {
    this.canvas.style.opacity = stale ? '0.35' : '1.0'
    this.canvas.style.filter = stale ? 'grayscale(1)' : ''
  }
}

export interface ChartPoint {
  x: number
  y: number
  clipped: boolean // value exceeded the axis (e.g. the "inf" sentinel)
}

/**
 * Map a metric series onto chart pixels.  Finite values scale into the
 * drawable band; +Infinity (the exact-reconstruction sentinel) clips to
 * the top of the axis and is flagged so it renders as a marker, never as
 * a gap.
 */
export function chartPoints(
  points: MetricPoint[],
  width: number,
  height: number,
  pad = 2,
): ChartPoint[] {
  if (points.length === 0) return []
  const finite = points.map((p) => p.value).filter((v) => Number.isFinite(v))
  const lo = finite.length ? Math.min(...finite) : 0
  const hi = finite.length ? Math.max(...finite) : 1
  const span = hi - lo || 1
  const minX = points[0]!.frameId
  const maxX = points[points.length - 1]!.frameId
  const spanX = maxX - minX || 1
  return points.map((p) => {
    const x = pad + ((p.frameId - minX) / spanX) * (width - 2 * pad)
    if (!Number.isFinite(p.value)) {
      return { x, y: pad, clipped: true }
    }
    const y = height - pad - ((p.value - lo) / span) * (height - 2 * pad)
    return { x, y, clipped: false }
  })
}

/** Draw one metric series onto a canvas (line plus clipped-top markers). */
export function drawChart(
  canvas: HTMLCanvasElement,
  points: MetricPoint[],
  color: string,
  label: string,
): void {
  const ctx = canvas.getContext('2d')
  if (!ctx) return
  const { width, height } = canvas
  ctx.clearRect(0, 0, width, height)
  ctx.fillStyle = '#111'
  ctx.fillRect(0, 0, width, height)
  ctx.fillStyle = '#888'
  ctx.font = '10px monospace'
  ctx.fillText(label, 4, 12)
  const mapped = chartPoints(points, width, height, 8)
  if (mapped.length === 0) return
  ctx.strokeStyle = color
  ctx.beginPath()
  mapped.forEach((p, i) => {
    if (i === 0) ctx.moveTo(p.x, p.y)
    else ctx.lineTo(p.x, p.y)
  })
  ctx.stroke()
  ctx.fillStyle = color
  for (const p of mapped) {
    if (p.clipped) {
      ctx.fillRect(p.x - 2, 0, 5, 5) // top-of-axis marker for "inf"
    }
  }
  const last = points[points.length - 1]!
  const text = Number.isFinite(last.value) ? last.value.toFixed(2) : 'inf'
  ctx.fillStyle = '#ccc'
  ctx.fillText(text, width - 48, 12)
}
