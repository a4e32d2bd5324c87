//! Headless scanline rasterizer for the sprite arena.
//!
//! No anti-aliasing and no floating-point accumulation across pixels, so a
//! scene renders to identical bytes on every call. Lighting multiplies each
//! pixel by `gain·tint` and clamps; textures replace the background layer
//! only.

use super::{SceneState, ShiftSpec, SpriteShape, ARENA};
use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub const SIDE: u32 = ARENA as u32;

/// Flat background of the top view.
pub const TOP_BG: [u8; 3] = [170, 170, 170];
/// Flat background of the side view (kept distinct so the views differ).
pub const SIDE_BG: [u8; 3] = [150, 156, 162];

const AGENT_COLOR: [u8; 3] = [30, 30, 40];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ViewId {
    Top,
    Side,
}

impl ViewId {
    pub fn name(&self) -> &'static str {
        match self {
            ViewId::Top => "top",
            ViewId::Side => "side",
        }
    }

    pub fn from_name(name: &str) -> crate::Result<Self> {
        match name {
            "top" => Ok(ViewId::Top),
            "side" => Ok(ViewId::Side),
            other => Err(crate::Error::contract(format!("unknown view: {other}"))),
        }
    }
}

/// Number of procedural background textures in the bank.
pub fn texture_bank_size() -> usize {
    8
}

fn texture_pixel(id: u32, x: u32, y: u32, noise: &[u8]) -> [u8; 3] {
    match id {
        0 => {
            // checkerboard
            if ((x / 16) + (y / 16)) % 2 == 0 {
                [148, 148, 148]
            } else {
                [192, 192, 192]
            }
        }
        1 => {
            // horizontal stripes
            if (y / 8) % 2 == 0 {
                [160, 168, 150]
            } else {
                [186, 178, 196]
            }
        }
        2 => {
            // vertical stripes
            if (x / 8) % 2 == 0 {
                [154, 166, 178]
            } else {
                [188, 180, 160]
            }
        }
        3 => {
            // seeded speckle
            let v = noise[(y * SIDE + x) as usize];
            [v, v, v]
        }
        4 => {
            // diagonal stripes
            if ((x + y) / 10) % 2 == 0 {
                [172, 158, 150]
            } else {
                [150, 172, 180]
            }
        }
        5 => {
            // dot grid
            let dx = (x % 14) as i32 - 7;
            let dy = (y % 14) as i32 - 7;
            if dx * dx + dy * dy <= 9 {
                [140, 140, 150]
            } else {
                [196, 196, 188]
            }
        }
        6 => {
            // horizontal gradient
            let v = (120 + (x * 100 / SIDE)) as u8;
            [v, v.saturating_add(8), v]
        }
        _ => {
            // vertical gradient
            let v = (120 + (y * 100 / SIDE)) as u8;
            [v, v, v.saturating_add(10)]
        }
    }
}

fn texture_noise(id: u32) -> Vec<u8> {
    if id != 3 {
        return Vec::new();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(0x7e87_0000 + id as u64);
    (0..SIDE * SIDE)
        .map(|_| 140 + (rng.gen::<u8>() % 60))
        .collect()
}

/// Maps world coordinates into the view's pixel frame.
fn view_point(view: ViewId, p: [f32; 2]) -> [f32; 2] {
    match view {
        ViewId::Top => p,
        // quarter-turn camera: x' = y, y' = ARENA - x
        ViewId::Side => [p[1], ARENA - 1.0 - p[0]],
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(bg: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let img = RgbImage::from_fn(SIDE, SIDE, |x, y| Rgb(bg(x, y)));
        Canvas { img }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if (0..SIDE as i64).contains(&x) && (0..SIDE as i64).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    fn fill_circle(&mut self, c: [f32; 2], r: f32, color: [u8; 3]) {
        shape_pixels_circle(c, r, |x, y| self.put(x, y, color));
    }

    fn fill_square(&mut self, c: [f32; 2], half: f32, color: [u8; 3]) {
        shape_pixels_square(c, half, |x, y| self.put(x, y, color));
    }

    fn fill_triangle(&mut self, c: [f32; 2], size: f32, color: [u8; 3]) {
        shape_pixels_triangle(c, size, |x, y| self.put(x, y, color));
    }

    fn ring(&mut self, c: [f32; 2], r: f32, thickness: f32, color: [u8; 3]) {
        let (x0, x1, y0, y1) = bounds(c, r + thickness);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f32 + 0.5 - c[0];
                let dy = y as f32 + 0.5 - c[1];
                let d2 = dx * dx + dy * dy;
                let outer = (r + thickness) * (r + thickness);
                let inner = (r - thickness).max(0.0) * (r - thickness).max(0.0);
                if d2 <= outer && d2 >= inner {
                    self.put(x, y, color);
                }
            }
        }
    }

    fn fill_rect(&mut self, c: [f32; 2], ext: [f32; 2], color: [u8; 3]) {
        let x0 = (c[0] - ext[0]).floor() as i64;
        let x1 = (c[0] + ext[0]).ceil() as i64;
        let y0 = (c[1] - ext[1]).floor() as i64;
        let y1 = (c[1] + ext[1]).ceil() as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let px = x as f32 + 0.5;
                let py = y as f32 + 0.5;
                if (px - c[0]).abs() <= ext[0] && (py - c[1]).abs() <= ext[1] {
                    self.put(x, y, color);
                }
            }
        }
    }

    fn cross(&mut self, c: [f32; 2], arm: f32, width: f32, color: [u8; 3]) {
        self.fill_rect(c, [arm, width], color);
        self.fill_rect(c, [width, arm], color);
    }
}

fn bounds(c: [f32; 2], r: f32) -> (i64, i64, i64, i64) {
    (
        (c[0] - r).floor() as i64,
        (c[0] + r).ceil() as i64,
        (c[1] - r).floor() as i64,
        (c[1] + r).ceil() as i64,
    )
}

fn shape_pixels_circle(c: [f32; 2], r: f32, mut put: impl FnMut(i64, i64)) {
    let (x0, x1, y0, y1) = bounds(c, r);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f32 + 0.5 - c[0];
            let dy = y as f32 + 0.5 - c[1];
            if dx * dx + dy * dy <= r * r {
                put(x, y);
            }
        }
    }
}

fn shape_pixels_square(c: [f32; 2], half: f32, mut put: impl FnMut(i64, i64)) {
    let (x0, x1, y0, y1) = bounds(c, half);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            if (px - c[0]).abs() <= half && (py - c[1]).abs() <= half {
                put(x, y);
            }
        }
    }
}

fn shape_pixels_triangle(c: [f32; 2], size: f32, mut put: impl FnMut(i64, i64)) {
    // upward triangle inscribed in the size-radius circle
    let v0 = [c[0], c[1] - size];
    let v1 = [c[0] - 0.866 * size, c[1] + 0.5 * size];
    let v2 = [c[0] + 0.866 * size, c[1] + 0.5 * size];
    let (x0, x1, y0, y1) = bounds(c, size);
    let edge = |a: [f32; 2], b: [f32; 2], p: [f32; 2]| -> f32 {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = [x as f32 + 0.5, y as f32 + 0.5];
            let e0 = edge(v0, v1, p);
            let e1 = edge(v1, v2, p);
            let e2 = edge(v2, v0, p);
            if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0) {
                put(x, y);
            }
        }
    }
}

fn draw_shape(canvas: &mut Canvas, shape: SpriteShape, c: [f32; 2], size: f32, color: [u8; 3]) {
    match shape {
        SpriteShape::Circle => canvas.fill_circle(c, size, color),
        SpriteShape::Square => canvas.fill_square(c, size, color),
        SpriteShape::Triangle => canvas.fill_triangle(c, size, color),
    }
}

/// Rasterizes one view of the scene and applies the shift's texture and
/// lighting.
pub fn render(state: &SceneState, shift: &ShiftSpec, view: ViewId) -> RgbImage {
    let noise;
    let mut canvas = match shift.texture {
        Some(id) => {
            noise = texture_noise(id);
            Canvas::new(|x, y| texture_pixel(id, x, y, &noise))
        }
        None => {
            let bg = match view {
                ViewId::Top => TOP_BG,
                ViewId::Side => SIDE_BG,
            };
            Canvas::new(|_, _| bg)
        }
    };

    for c in &state.containers {
        let ext = match view {
            ViewId::Top => c.extent,
            ViewId::Side => [c.extent[1], c.extent[0]],
        };
        canvas.fill_rect(view_point(view, c.pos), ext, c.color);
    }
    if let Some(g) = &state.goal {
        let p = view_point(view, g.pos);
        if g.filled {
            canvas.fill_circle(p, g.radius, g.color);
        } else {
            canvas.ring(p, g.radius, 1.5, g.color);
        }
    }
    if let Some(rail) = &state.rail {
        let mid = [(rail.x_min + rail.x_max) * 0.5, rail.y];
        let ext = [(rail.x_max - rail.x_min) * 0.5, 1.0];
        let (p, e) = match view {
            ViewId::Top => (mid, ext),
            ViewId::Side => (view_point(view, mid), [ext[1], ext[0]]),
        };
        canvas.fill_rect(p, e, [120, 120, 120]);
    }
    for o in &state.objects {
        draw_shape(&mut canvas, o.shape, view_point(view, o.pos), o.size, o.color);
    }
    // agent last, on top; closed grip fills the center
    let ap = view_point(view, state.agent_pos);
    canvas.cross(ap, 5.0, 1.2, AGENT_COLOR);
    if state.grip > 0.5 {
        canvas.fill_square(ap, 2.2, [0, 0, 0]);
    } else {
        canvas.ring(ap, 2.2, 0.8, [245, 245, 245]);
    }

    apply_lighting(&mut canvas.img, shift);
    canvas.img
}

/// Per-pixel multiply by `gain·tint`, then clamp to the valid range.
fn apply_lighting(img: &mut RgbImage, shift: &ShiftSpec) {
    let l = &shift.lighting;
    if l.is_identity() {
        return;
    }
    for px in img.pixels_mut() {
        for c in 0..3 {
            let v = px.0[c] as f32 * l.gain * l.tint[c];
            px.0[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Rasterizer-exact instance segmentation of the top view: objects labeled
/// `1..=n` in draw order (later objects overwrite, matching occlusion);
/// background, containers, goals, and the agent are 0.
pub fn instance_masks(state: &SceneState) -> Array2<u8> {
    let mut labels = Array2::zeros((SIDE as usize, SIDE as usize));
    for (i, o) in state.objects.iter().enumerate() {
        let id = (i + 1) as u8;
        let mut put = |x: i64, y: i64| {
            if (0..SIDE as i64).contains(&x) && (0..SIDE as i64).contains(&y) {
                labels[(y as usize, x as usize)] = id;
            }
        };
        match o.shape {
            SpriteShape::Circle => shape_pixels_circle(o.pos, o.size, &mut put),
            SpriteShape::Square => shape_pixels_square(o.pos, o.size, &mut put),
            SpriteShape::Triangle => shape_pixels_triangle(o.pos, o.size, &mut put),
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sprites::{ShiftSpec, SpriteEnv, TaskKind, TaskSpec};

    fn scene() -> SceneState {
        let (env, _) = SpriteEnv::reset(
            &TaskSpec::new(TaskKind::PickPlace),
            &ShiftSpec::identity(),
            7,
            &[ViewId::Top],
        )
        .unwrap();
        env.state().clone()
    }

    #[test]
    fn identity_lighting_leaves_pixels() {
        let st = scene();
        let base = render(&st, &ShiftSpec::identity(), ViewId::Top);
        let mut shift = ShiftSpec::identity();
        shift.lighting.gain = 1.0;
        shift.lighting.tint = [1.0, 1.0, 1.0];
        assert_eq!(render(&st, &shift, ViewId::Top), base);
    }

    #[test]
    fn half_gain_halves_background() {
        let st = scene();
        let mut shift = ShiftSpec::identity();
        shift.lighting.gain = 0.5;
        let img = render(&st, &shift, ViewId::Top);
        // corner pixel is background in this scene (objects sit inside the
        // placement margin)
        let px = img.get_pixel(0, 0).0;
        assert_eq!(px, [85, 85, 85]);
    }

    #[test]
    fn masks_align_with_rendered_sprites() {
        let st = scene();
        let img = render(&st, &ShiftSpec::identity(), ViewId::Top);
        let masks = instance_masks(&st);
        let target = &st.objects[0];
        // the target object's mask pixels show the object color wherever
        // the agent is not occluding (agent is drawn on top)
        let mut checked = 0;
        for y in 0..SIDE {
            for x in 0..SIDE {
                if masks[(y as usize, x as usize)] == 1 {
                    let d = ((x as f32 - st.agent_pos[0]).powi(2)
                        + (y as f32 - st.agent_pos[1]).powi(2))
                    .sqrt();
                    if d > 8.0 {
                        assert_eq!(img.get_pixel(x, y).0, target.color);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 20, "object mask too small: {checked}");
    }

    #[test]
    fn masks_partition_the_image() {
        let st = scene();
        let masks = instance_masks(&st);
        let n = st.objects.len() as u8;
        assert!(masks.iter().all(|&v| v <= n));
    }

    #[test]
    fn background_only_scene_is_all_zeros() {
        let mut st = scene();
        st.objects.clear();
        let masks = instance_masks(&st);
        assert!(masks.iter().all(|&v| v == 0));
    }

    #[test]
    fn textures_replace_background_only() {
        let st = scene();
        let mut shift = ShiftSpec::identity();
        shift.texture = Some(0);
        let img = render(&st, &shift, ViewId::Top);
        let base = render(&st, &ShiftSpec::identity(), ViewId::Top);
        let masks = instance_masks(&st);
        // object pixels unchanged by the texture
        for y in 0..SIDE {
            for x in 0..SIDE {
                if masks[(y as usize, x as usize)] != 0 {
                    assert_eq!(img.get_pixel(x, y), base.get_pixel(x, y));
                }
            }
        }
        // background corner changed to the checker texture
        assert_eq!(img.get_pixel(0, 0).0, [148, 148, 148]);
    }

    #[test]
    fn views_differ() {
        let st = scene();
        let top = render(&st, &ShiftSpec::identity(), ViewId::Top);
        let side = render(&st, &ShiftSpec::identity(), ViewId::Side);
        assert_ne!(top, side);
    }
}
