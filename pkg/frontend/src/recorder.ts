/**
 * Records a guided denoising trajectory into a latent-cache directory:
 * manifest.json plus raw little-endian float32 tensors for the latent,
 * the unconditional / per-condition / composed predictions at every
 * visited timestep, and the final latent as z0.bin.
 */

import { mkdirSync, writeFileSync } from 'node:fs'
import { join } from 'node:path'

import { JsonValue, manifestText } from './manifest.js'
import { SeededRandom } from './random.js'
import { DdimScheduler } from './scheduler.js'
import { toLittleEndianBytes, zeros } from './tensor.js'
import { MockUnet, composePredictions } from './unet.js'

export interface RecorderConfig {
  modelId: string
  composedPrompt: string
  componentPrompts: string[]
  inferenceSteps: number
  guidanceScale: number
  seed: number
  outDir: string
  /** pixel dimensions; the latent grid is 8x smaller */
  height?: number
  width?: number
  trainTimesteps?: number
}

export interface RecordSummary {
  outDir: string
  timesteps: number[]
  files: number
}

const LATENT_CHANNELS = 4
const VAE_SCALE = 8

export function validateConfig (cfg: RecorderConfig): void {
  if (!Number.isInteger(cfg.inferenceSteps) || cfg.inferenceSteps < 1) {
    throw new Error('inferenceSteps must be a positive integer')
  }
  if (cfg.componentPrompts.length === 0 ||
      cfg.componentPrompts.some((p) => p.length === 0)) {
    throw new Error('componentPrompts must be nonempty strings')
  }
  const height = cfg.height ?? 128
  const width = cfg.width ?? 128
  if (height % VAE_SCALE !== 0 || width % VAE_SCALE !== 0) {
    throw new Error(`height and width must be multiples of ${VAE_SCALE}`)
  }
}

export function recordRun (cfg: RecorderConfig): RecordSummary {
  validateConfig(cfg)
  const height = (cfg.height ?? 128) / VAE_SCALE
  const width = (cfg.width ?? 128) / VAE_SCALE
  const shape = [LATENT_CHANNELS, height, width] as const
  const scheduler = new DdimScheduler({ trainTimesteps: cfg.trainTimesteps })
  const timesteps = scheduler.visitedTimesteps(cfg.inferenceSteps)
  const unet = new MockUnet(cfg.modelId, shape)

  mkdirSync(cfg.outDir, { recursive: true })
  let files = 0
  const dump = (name: string, data: Float32Array): void => {
    writeFileSync(join(cfg.outDir, name), toLittleEndianBytes(data))
    files += 1
  }

  const rng = new SeededRandom(cfg.seed)
  let latent = rng.fillNormal(zeros(shape))
  for (let j = 0; j < timesteps.length; j++) {
    const t = timesteps[j]
    const ab = scheduler.alphaBar(t)
    const uncond = unet.predict(latent, t, '', ab)
    const conds = cfg.componentPrompts.map(
      (p) => unet.predict(latent, t, p, ab)
    )
    const composed = composePredictions(uncond, conds, cfg.guidanceScale)

    dump(`latent_t${t}.bin`, latent)
    dump(`null_t${t}.bin`, uncond)
    dump(`composed_t${t}.bin`, composed)
    conds.forEach((pred, k) => dump(`cond${k}_t${t}.bin`, pred))

    const tPrev = j + 1 < timesteps.length ? timesteps[j + 1] : 0
    latent = scheduler.step(latent, composed, t, tPrev)
  }
  dump('z0.bin', latent)

  const manifest: JsonValue = {
    format: 'complift-latent-cache',
    version: 1,
    betas: scheduler.betas,
    timesteps,
    conditions: cfg.componentPrompts,
    shape: [...shape],
    dtype: '<f4',
    byte_order: 'little',
    z0: 'z0.bin',
    metadata: {
      backend: `node-${process.versions.node}`,
      composed_prompt: cfg.composedPrompt,
      guidance_scale: cfg.guidanceScale,
      model: cfg.modelId,
      seed: cfg.seed
    }
  }
  writeFileSync(join(cfg.outDir, 'manifest.json'), manifestText(manifest))
  return { outDir: cfg.outDir, timesteps, files: files + 1 }
}
