#!/usr/bin/env node
/** Flag-driven wrapper around recordRun. */

import { RecorderConfig, recordRun } from './recorder.js'

const USAGE = `usage: sd-recorder --out DIR --prompt TEXT --component TEXT [--component TEXT ...]
                   [--steps N] [--guidance SCALE] [--seed N] [--model ID]
                   [--height PX] [--width PX] [--train-timesteps N]`

function fail (message: string): never {
  process.stderr.write(`${message}\n${USAGE}\n`)
  process.exit(2)
}

export function parseArgs (argv: string[]): RecorderConfig {
  const components: string[] = []
  const values = new Map<string, string>()
  const takesValue = new Set([
    '--out', '--prompt', '--component', '--steps', '--guidance', '--seed',
    '--model', '--height', '--width', '--train-timesteps'
  ])
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    if (flag === '--help' || flag === '-h') {
      process.stdout.write(`${USAGE}\n`)
      process.exit(0)
    }
    if (!takesValue.has(flag)) fail(`unknown flag ${flag}`)
    const value = argv[++i]
    if (value === undefined) fail(`${flag} needs a value`)
    if (flag === '--component') {
      components.push(value)
    } else {
      values.set(flag, value)
    }
  }
  const out = values.get('--out')
  const prompt = values.get('--prompt')
  if (out === undefined || prompt === undefined || components.length === 0) {
    fail('--out, --prompt, and at least one --component are required')
  }
  const int = (flag: string, fallback: number): number => {
    const raw = values.get(flag)
    if (raw === undefined) return fallback
    const parsed = Number(raw)
    if (!Number.isInteger(parsed)) fail(`${flag} must be an integer`)
    return parsed
  }
  const num = (flag: string, fallback: number): number => {
    const raw = values.get(flag)
    if (raw === undefined) return fallback
    const parsed = Number(raw)
    if (!Number.isFinite(parsed)) fail(`${flag} must be a number`)
    return parsed
  }
  return {
    modelId: values.get('--model') ?? 'mock/stable-diffusion-v1-5',
    composedPrompt: prompt,
    componentPrompts: components,
    inferenceSteps: int('--steps', 50),
    guidanceScale: num('--guidance', 7.5),
    seed: int('--seed', 0),
    outDir: out,
    height: int('--height', 128),
    width: int('--width', 128),
    trainTimesteps: int('--train-timesteps', 1000)
  }
}

const entry = process.argv[1] ?? ''
if (entry.endsWith('cli.js') || entry.endsWith('sd-recorder')) {
  try {
    const summary = recordRun(parseArgs(process.argv.slice(2)))
    process.stdout.write(
      `wrote ${summary.files} files to ${summary.outDir} ` +
      `(${summary.timesteps.length} steps)\n`
    )
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    process.exit(1)
  }
}
