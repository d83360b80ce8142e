/**
 * Deterministic DDIM stepping over a linear-beta forward process.
 * Only the visited subset of the training schedule is traversed; the
 * full beta table goes into the manifest so readers can rebuild the
 * forward kernel exactly.
 */

import { clamp, scaleAdd } from './tensor.js'

export interface SchedulerConfig {
  trainTimesteps?: number
  betaStart?: number
  betaEnd?: number
}

export class DdimScheduler {
  readonly trainTimesteps: number
  readonly betas: number[]
  readonly alphaBars: number[]

  constructor (config: SchedulerConfig = {}) {
    this.trainTimesteps = config.trainTimesteps ?? 1000
    const start = config.betaStart ?? 1e-4
    const end = config.betaEnd ?? 0.02
    if (this.trainTimesteps < 1) {
      throw new Error('trainTimesteps must be at least 1')
    }
    this.betas = []
    this.alphaBars = []
    let bar = 1
    for (let i = 0; i < this.trainTimesteps; i++) {
      const beta = this.trainTimesteps === 1
        ? start
        : start + ((end - start) * i) / (this.trainTimesteps - 1)
      bar *= 1 - beta
      this.betas.push(beta)
      this.alphaBars.push(bar)
    }
  }

  /** cumulative signal fraction at a 1-based timestep; t=0 means clean. */
  alphaBar (t: number): number {
    return t === 0 ? 1 : this.alphaBars[t - 1]
  }

  /** N visited 1-based timesteps, strided and descending, ending at stride. */
  visitedTimesteps (steps: number): number[] {
    if (steps < 1 || steps > this.trainTimesteps) {
      throw new Error(`steps must be in [1, ${this.trainTimesteps}]`)
    }
    const stride = Math.floor(this.trainTimesteps / steps)
    const out: number[] = []
    for (let j = 0; j < steps; j++) {
      out.push(this.trainTimesteps - j * stride)
    }
    return out
  }

  /**
   * One deterministic (eta = 0) update from t to tPrev given the noise
   * prediction. The implied clean image is clamped like production
   * pipelines do, which keeps mock trajectories finite.
   */
  step (
    latent: Float32Array, eps: Float32Array, t: number, tPrev: number
  ): Float32Array {
    const ab = this.alphaBar(t)
    const abPrev = this.alphaBar(tPrev)
    const x0 = clamp(
      scaleAdd(latent, 1 / Math.sqrt(ab), eps, -Math.sqrt((1 - ab) / ab)),
      -4, 4
    )
    return scaleAdd(x0, Math.sqrt(abPrev), eps, Math.sqrt(1 - abPrev))
  }
}
