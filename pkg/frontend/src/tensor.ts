/**
 * Flat float32 tensors with explicit little-endian serialization. The
 * cache format pins "<f4" C-order bytes, so writing goes through a
 * DataView instead of trusting the platform's Float32Array layout.
 */

export type Shape = readonly number[]

export function numel (shape: Shape): number {
  return shape.reduce((a, b) => a * b, 1)
}

export function zeros (shape: Shape): Float32Array {
  return new Float32Array(numel(shape))
}

export function toLittleEndianBytes (data: Float32Array): Uint8Array {
  const out = new Uint8Array(data.length * 4)
  const view = new DataView(out.buffer)
  for (let i = 0; i < data.length; i++) {
    view.setFloat32(i * 4, data[i], true)
  }
  return out
}

export function scaleAdd (
  a: Float32Array, sa: number, b: Float32Array, sb: number
): Float32Array {
  const out = new Float32Array(a.length)
  for (let i = 0; i < a.length; i++) {
    out[i] = sa * a[i] + sb * b[i]
  }
  return out
}

export function clamp (data: Float32Array, lo: number, hi: number): Float32Array {
  const out = new Float32Array(data.length)
  for (let i = 0; i < data.length; i++) {
    out[i] = Math.min(hi, Math.max(lo, data[i]))
  }
  return out
}
