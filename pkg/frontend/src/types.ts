/** Shared editor types: selection paths, edit-log entries, colors. */

export interface Point {
  x: number;
  y: number;
}

export type Rgb = readonly [number, number, number]; // 0-255 per channel

export const WHITE: Rgb = [255, 255, 255];

export type ToolName = "background" | "inpaint" | "diffusion_inpaint";

/**
 * A region the user outlined, either a closed lasso polygon or a brush
 * stroke (open polyline stamped with a round tip).  Points are display
 * pixels; out-of-bounds points are clipped at construction, closed lassos
 * need at least three points.
 */
export interface SelectionPath {
  kind: "lasso" | "brush";
  points: Point[];
  closed: boolean;
  radius?: number; // brush only, px
}

/**
 * One replayable edit.  The entry carries everything needed to regenerate
 * its pixels over the pristine render: the path, the fill color for the
 * color tool, and the prompt plus chosen candidate index for diffusion
 * inpainting (candidate pixels come from the service, which is
 * deterministic for a fixed session state).
 */
export interface EditLogEntry {
  tool: ToolName;
  path: SelectionPath;
  color?: Rgb;
  prompt?: string;
  candidate?: number;
}

export const BRUSH_MIN = 2;
export const BRUSH_MAX = 64;

export function clampBrushRadius(radius: number): number {
  if (!Number.isFinite(radius)) return BRUSH_MIN;
  return Math.min(BRUSH_MAX, Math.max(BRUSH_MIN, radius));
}
