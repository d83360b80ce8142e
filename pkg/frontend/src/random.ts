/**
 * Seeded RNG for reproducible trajectories. splitmix32 core with a
 * Marsaglia polar transform for normals, so the only math builtins used
 * are sqrt and log and runs stay reproducible within one engine.
 */

export class SeededRandom {
  private state: number
  private spare: number | null = null

  constructor (seed: number) {
    this.state = seed >>> 0
  }

  /** Uniform in [0, 1). */
  next (): number {
    let z = (this.state = (this.state + 0x9e3779b9) >>> 0)
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad)
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97)
    z = (z ^ (z >>> 15)) >>> 0
    return z / 4294967296
  }

  /** Standard normal via the polar method. */
  normal (): number {
    if (this.spare !== null) {
      const out = this.spare
      this.spare = null
      return out
    }
    let u = 0
    let v = 0
    let s = 0
    do {
      u = 2 * this.next() - 1
      v = 2 * this.next() - 1
      s = u * u + v * v
    } while (s === 0 || s >= 1)
    const scale = Math.sqrt((-2 * Math.log(s)) / s)
    this.spare = v * scale
    return u * scale
  }

  fillNormal (out: Float32Array): Float32Array {
    for (let i = 0; i < out.length; i++) {
      out[i] = this.normal()
    }
    return out
  }
}

/** FNV-1a over UTF-16 code units; stable seed for a prompt string. */
export function hashString (text: string): number {
  let h = 0x811c9dc5
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i)
    h = Math.imul(h, 0x01000193)
  }
  return h >>> 0
}
