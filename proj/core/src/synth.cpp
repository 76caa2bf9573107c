#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>

#include "hairseg/data.hpp"
#include "hairseg/error.hpp"
#include "hairseg/png_io.hpp"

namespace fs = std::filesystem;

namespace hairseg {

namespace {

struct Vec2 {
    double x, y;
};

double dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = p.x - a.x, wy = p.y - a.y;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx);
    const double dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

struct Stroke {
    std::vector<Vec2> poly; // flattened quadratic Bezier
    double radius;
    float color[3];
    double min_x, min_y, max_x, max_y;
};

// Endpoints sit outside the canvas on two distinct edges, so strokes cross
// the frame like real hairs and leave no free tips inside the image.
Vec2 edge_point(RngState& rng, double extent, std::size_t edge) {
    const double along = rng.next_uniform() * extent;
    const double out = 2.0 + rng.next_uniform() * 0.15 * extent;
    switch (edge) {
    case 0: return {along, -out};
    case 1: return {along, extent + out};
    case 2: return {-out, along};
    default: return {extent + out, along};
    }
}

Stroke make_stroke(RngState& rng, double extent) {
    Stroke s;
    const std::size_t e0 = rng.next_range(0, 3);
    std::size_t e1 = rng.next_range(0, 2);
    if (e1 >= e0) ++e1; // distinct edges
    const Vec2 p0 = edge_point(rng, extent, e0);
    const Vec2 p2 = edge_point(rng, extent, e1);
    const Vec2 mid{(p0.x + p2.x) / 2.0, (p0.y + p2.y) / 2.0};
    // control point offset perpendicular to the chord, curvature kept gentle
    const double len = std::hypot(p2.x - p0.x, p2.y - p0.y) + 1e-9;
    const double nx = -(p2.y - p0.y) / len;
    const double ny = (p2.x - p0.x) / len;
    const double bow = (rng.next_uniform() - 0.5) * 0.16 * len;
    const Vec2 p1{mid.x + nx * bow, mid.y + ny * bow};

    const int segments = 32;
    s.poly.reserve(segments + 1);
    for (int i = 0; i <= segments; ++i) {
        const double t = static_cast<double>(i) / segments;
        const double u = 1.0 - t;
        s.poly.push_back({u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x,
                          u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y});
    }
    s.radius = (10.0 + rng.next_uniform() * 4.0) / 2.0; // stroke width 10..14 px
    const float shade = static_cast<float>(rng.next_uniform());
    s.color[0] = 0.05f + 0.08f * shade;
    s.color[1] = 0.04f + 0.06f * shade;
    s.color[2] = 0.03f + 0.05f * shade;
    s.min_x = s.max_x = s.poly[0].x;
    s.min_y = s.max_y = s.poly[0].y;
    for (const auto& p : s.poly) {
        s.min_x = std::min(s.min_x, p.x);
        s.max_x = std::max(s.max_x, p.x);
        s.min_y = std::min(s.min_y, p.y);
        s.max_y = std::max(s.max_y, p.y);
    }
    return s;
}

double stroke_distance(const Stroke& s, Vec2 p) {
    double best = 1e18;
    for (std::size_t i = 0; i + 1 < s.poly.size(); ++i)
        best = std::min(best, dist_point_segment(p, s.poly[i], s.poly[i + 1]));
    return best;
}

void render_sample(RngState rng, std::size_t extent, std::vector<float>& rgb,
                   std::vector<std::uint8_t>& mask) {
    const std::size_t e = extent;
    const double ed = static_cast<double>(e);
    rgb.assign(e * e * 3, 0.0f);
    mask.assign(e * e, 0);

    // skin-toned background with a gentle gradient and speckle
    const float base[3] = {0.76f + 0.10f * static_cast<float>(rng.next_uniform()),
                           0.56f + 0.10f * static_cast<float>(rng.next_uniform()),
                           0.46f + 0.10f * static_cast<float>(rng.next_uniform())};
    const double gx = (rng.next_uniform() - 0.5) * 0.10;
    const double gy = (rng.next_uniform() - 0.5) * 0.10;
    for (std::size_t y = 0; y < e; ++y) {
        for (std::size_t x = 0; x < e; ++x) {
            const float grad = static_cast<float>(gx * (x / ed - 0.5) + gy * (y / ed - 0.5));
            const float speckle = static_cast<float>((rng.next_uniform() - 0.5) * 0.03);
            for (std::size_t c = 0; c < 3; ++c)
                rgb[(y * e + x) * 3 + c] = std::clamp(base[c] + grad + speckle, 0.0f, 1.0f);
        }
    }

    // elliptical lesion blob with a feathered edge
    const double cx = (0.35 + 0.30 * rng.next_uniform()) * ed;
    const double cy = (0.35 + 0.30 * rng.next_uniform()) * ed;
    const double ax = (0.12 + 0.18 * rng.next_uniform()) * ed;
    const double ay = (0.12 + 0.18 * rng.next_uniform()) * ed;
    const double rot = rng.next_uniform() * 3.14159265358979;
    const float lesion[3] = {0.42f + 0.08f * static_cast<float>(rng.next_uniform()),
                             0.30f + 0.06f * static_cast<float>(rng.next_uniform()),
                             0.26f + 0.06f * static_cast<float>(rng.next_uniform())};
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (std::size_t y = 0; y < e; ++y) {
        for (std::size_t x = 0; x < e; ++x) {
            const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
            const double rx = (dx * cr + dy * sr) / ax;
            const double ry = (-dx * sr + dy * cr) / ay;
            const double d = rx * rx + ry * ry;
            const float alpha = static_cast<float>(std::clamp((1.15 - d) / 0.30, 0.0, 1.0));
            if (alpha <= 0.0f) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                float& px = rgb[(y * e + x) * 3 + c];
                px = px * (1.0f - alpha) + lesion[c] * alpha;
            }
        }
    }

    // dark hair strokes; the exact coverage (5x5 subsamples) becomes the mask
    const std::size_t n_strokes = rng.next_range(0, 4);
    std::vector<std::uint32_t> cover_bits(e * e, 0);
    for (std::size_t si = 0; si < n_strokes; ++si) {
        Stroke s = make_stroke(rng, ed);
        const long x_lo = std::max(0L, static_cast<long>(std::floor(s.min_x - s.radius - 1)));
        const long x_hi = std::min<long>(e - 1, static_cast<long>(std::ceil(s.max_x + s.radius + 1)));
        const long y_lo = std::max(0L, static_cast<long>(std::floor(s.min_y - s.radius - 1)));
        const long y_hi = std::min<long>(e - 1, static_cast<long>(std::ceil(s.max_y + s.radius + 1)));
        for (long y = y_lo; y <= y_hi; ++y) {
            for (long x = x_lo; x <= x_hi; ++x) {
                int covered = 0;
                for (int sy = 0; sy < 5; ++sy) {
                    for (int sx = 0; sx < 5; ++sx) {
                        const Vec2 p{x + (sx + 0.5) / 5.0, y + (sy + 0.5) / 5.0};
                        if (stroke_distance(s, p) <= s.radius) {
                            covered += 1;
                            cover_bits[y * e + x] |= std::uint32_t(1) << (sy * 5 + sx);
                        }
                    }
                }
                if (covered == 0) continue;
                const float alpha = static_cast<float>(covered) / 25.0f;
                for (std::size_t c = 0; c < 3; ++c) {
                    float& px = rgb[(y * e + x) * 3 + c];
                    px = px * (1.0f - alpha) + s.color[c] * alpha;
                }
            }
        }
    }
    for (std::size_t i = 0; i < e * e; ++i)
        mask[i] = std::popcount(cover_bits[i]) >= 13 ? 1 : 0;
}

} // namespace

void synth_generate(const SynthSpec& spec, const std::string& root) {
    HS_CHECK_PARAM(spec.count >= 1, "synth_generate: count must be >= 1");
    HS_CHECK_PARAM(spec.extent >= 32 && spec.extent % 32 == 0,
                   "synth_generate: extent " << spec.extent << " must be divisible by 32");
    const fs::path images = fs::path(root) / "images";
    const fs::path masks = fs::path(root) / "masks";
    std::error_code ec;
    fs::create_directories(images, ec);
    fs::create_directories(masks, ec);
    HS_CHECK(fs::is_directory(images) && fs::is_directory(masks), ErrorKind::Io,
             "cannot create dataset directories under " << root);

    std::vector<float> rgb;
    std::vector<std::uint8_t> mask;
    for (std::size_t i = 0; i < spec.count; ++i) {
        render_sample(RngState(spec.seed).derive(0x53594E00 + i), spec.extent, rgb, mask);

        char id[16];
        std::snprintf(id, sizeof id, "synth%04zu", i);

        PngImage img;
        img.height = img.width = spec.extent;
        img.color = PngColor::Rgb;
        img.pixels.resize(rgb.size());
        for (std::size_t p = 0; p < rgb.size(); ++p)
            img.pixels[p] = static_cast<std::uint8_t>(
                std::clamp(std::lround(rgb[p] * 255.0f), 0L, 255L));
        write_png((images / (std::string(id) + ".png")).string(), img);

        PngImage msk;
        msk.height = msk.width = spec.extent;
        msk.color = PngColor::Gray;
        msk.pixels.resize(mask.size());
        for (std::size_t p = 0; p < mask.size(); ++p) msk.pixels[p] = mask[p] ? 255 : 0;
        write_png((masks / (std::string(id) + ".png")).string(), msk);
    }
}

} // namespace hairseg
