#pragma once

// Procedural pseudo-handwriting. Text content (which glyphs appear) varies
// per sample; style (pen width, slant, curvature jitter, spacing, baseline
// wobble) is fixed per writer. All geometry is integer fixed-point so the
// produced bytes do not depend on the platform's floating-point behaviour.

#include <algorithm>
#include <array>
#include <cstdlib>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "deepwriter/errors.hpp"
#include "deepwriter/image.hpp"
#include "deepwriter/image_io.hpp"
#include "deepwriter/manifest.hpp"
#include "deepwriter/random.hpp"

namespace deepwriter {

/// Glyph generator mode; the two modes share no glyph shapes.
enum class Script { latin, block };

inline const char* to_string(Script s) { return s == Script::latin ? "latin" : "block"; }

inline Script parse_script(const std::string& s) {
  if (s == "latin") return Script::latin;
  if (s == "block") return Script::block;
  throw DomainError("unknown script '" + s + "' (expected latin or block)");
}

/**
 * Writer style. Each parameter is stored as a position q in [0, 1000]
 * within its documented range:
 *   thickness  1.2 .. 5.0 px pen diameter
 *   slant     -0.5 .. 0.5 rad shear
 *   jitter    -0.3 .. 0.3 curvature: control-point bulge across each
 *                         stroke chord, as a fraction of the body height
 *   spacing    1   .. 20 px between glyphs
 *   wobble     0   .. 8 px baseline amplitude
 * Values are for the default 64 px canvas.
 */
struct WriterStyle {
  static constexpr int kResolution = 1000;
  enum Param { thickness, slant, jitter, spacing, wobble, kCount };

  std::array<int, kCount> q{};

  double thickness_px() const { return 1.2 + 3.8 * q[thickness] / kResolution; }
  double slant_rad() const { return -0.5 + 1.0 * q[slant] / kResolution; }
  double jitter_ratio() const { return -0.3 + 0.6 * q[jitter] / kResolution; }
  double spacing_px() const { return 1.0 + 19.0 * q[spacing] / kResolution; }
  double wobble_px() const { return 8.0 * q[wobble] / kResolution; }

  /// True when at least two parameters differ by 10% of their range.
  bool distinct_from(const WriterStyle& o) const {
    int far = 0;
    for (int i = 0; i < kCount; ++i) {
      if (std::abs(q[i] - o.q[i]) >= kResolution / 10) ++far;
    }
    return far >= 2;
  }

  friend bool operator==(const WriterStyle&, const WriterStyle&) = default;
};

struct ImageSizePolicy {
  std::size_t canvas_height = 64;
  std::size_t min_glyphs = 8;
  std::size_t max_glyphs = 14;
};

struct SynthOptions {
  std::size_t num_writers = 10;
  std::size_t samples_per_writer = 30;
  Script script = Script::latin;
  ImageSizePolicy size;
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  std::string writer;
  std::size_t writer_index = 0;
  std::size_t sample_index = 0;
  GrayImage image;
};

inline std::string synthetic_writer_label(std::size_t w) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "w%03zu", w);
  return buf;
}

/// Styles for all writers of a corpus, drawn in writer order with rejection
/// until each differs from every earlier writer (WriterStyle::distinct_from).
inline std::vector<WriterStyle> generate_writer_styles(std::size_t num_writers, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5717e));
  std::vector<WriterStyle> styles;
  constexpr int kMaxAttempts = 100000;
  for (std::size_t w = 0; w < num_writers; ++w) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      WriterStyle s;
      for (auto& v : s.q) v = static_cast<int>(uniform_int(rng, 0, WriterStyle::kResolution));
      accepted = std::all_of(styles.begin(), styles.end(),
                             [&](const WriterStyle& o) { return s.distinct_from(o); });
      if (accepted) styles.push_back(s);
    }
    if (!accepted) {
      throw DomainError("cannot draw " + std::to_string(num_writers) + " mutually distinct writer styles");
    }
  }
  return styles;
}

namespace synth_detail {

constexpr std::int64_t kFp = 16;        // fixed-point subdivisions per pixel
constexpr std::int64_t kGlyphUnit = 256;  // glyph template box side

struct Point {
  std::int64_t x, y;
};
struct Stroke {
  Point a, c, b;  // quadratic Bézier: start, control, end
};
using Glyph = std::vector<Stroke>;

inline std::int64_t isqrt(std::int64_t v) {
  if (v <= 0) return 0;
  std::int64_t r = 0;
  std::int64_t bit = std::int64_t{1} << 62;
  while (bit > v) bit >>= 2;
  while (bit != 0) {
    if (v >= r + bit) {
      v -= r + bit;
      r = (r >> 1) + bit;
    } else {
      r >>= 1;
    }
    bit >>= 2;
  }
  return r;
}

/// Periodic wave over t in 1024 steps, amplitude 1024 (parabolic arches).
inline std::int64_t wave(std::int64_t t) {
  t = ((t % 1024) + 1024) % 1024;
  const std::int64_t h = t % 512;
  const std::int64_t arch = 4 * h * (512 - h) * 1024 / (512 * 512);
  return t < 512 ? arch : -arch;
}

/// tan(x) for x in milliradians, |x| <= 500, as a 16.16 value (odd Taylor
/// series to the fifth power).
inline std::int64_t tan_q16(std::int64_t x_milli) {
  const std::int64_t x = x_milli;
  const std::int64_t t1 = x * 65536 / 1000;
  const std::int64_t t3 = x * x * x * 65536 / 3 / 1000000000;
  const std::int64_t t5 = (x * x * x * x / 1000) * x * 2 / 15 * 65536 / 1000000000000;
  return t1 + t3 + t5;
}

inline std::vector<Glyph> glyph_set(Script script) {
  Rng rng(script == Script::latin ? 0x1a71aULL : 0xb10cULL);
  constexpr int kGlyphs = 20;
  std::vector<Glyph> glyphs;
  auto r = [&](std::int64_t lo, std::int64_t hi) { return uniform_int(rng, lo, hi); };
  for (int g = 0; g < kGlyphs; ++g) {
    Glyph glyph;
    if (script == Script::latin) {
      // Curvy strokes; some reach above (ascender) or below (descender) the body.
      const auto strokes = r(1, 2);
      const std::int64_t top = r(0, 3) == 0 ? -160 : 0;
      const std::int64_t bottom = r(0, 4) == 0 ? 400 : kGlyphUnit;
      for (std::int64_t s = 0; s < strokes; ++s) {
        Stroke st{{r(0, 256), r(top, bottom)}, {r(-64, 320), r(top - 64, bottom + 64)},
                  {r(0, 256), r(top, bottom)}};
        glyph.push_back(st);
      }
      // Anchor the first stroke on the baseline for the connecting ligature.
      glyph.front().a = {r(0, 48), kGlyphUnit};
      glyph.back().b = {r(208, 256), r(128, 256)};
    } else {
      // Mostly straight horizontal/vertical/diagonal strokes filling a square.
      const auto strokes = r(3, 5);
      for (std::int64_t s = 0; s < strokes; ++s) {
        Point a, b;
        switch (r(0, 3)) {
          case 0: {
            const auto y = r(16, 240);
            a = {r(0, 96), y};
            b = {r(160, 256), y + r(-16, 16)};
            break;
          }
          case 1: {
            const auto x = r(16, 240);
            a = {x, r(0, 96)};
            b = {x + r(-16, 16), r(160, 256)};
            break;
          }
          case 2:
            a = {r(0, 96), r(0, 96)};
            b = {r(160, 256), r(160, 256)};
            break;
          default:
            a = {r(160, 256), r(0, 96)};
            b = {r(0, 96), r(160, 256)};
            break;
        }
        const Point c{(a.x + b.x) / 2 + r(-20, 20), (a.y + b.y) / 2 + r(-20, 20)};
        glyph.push_back({a, c, b});
      }
    }
    glyphs.push_back(std::move(glyph));
  }
  return glyphs;
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), coverage_(w * h, 0) {}

  /// Stamps a round pen of radius `radius` (fixed-point) along the curve.
  void stroke(const Stroke& s, std::int64_t radius) {
    const std::int64_t len = isqrt(sq(s.c.x - s.a.x) + sq(s.c.y - s.a.y)) +
                             isqrt(sq(s.b.x - s.c.x) + sq(s.b.y - s.c.y));
    const std::int64_t n = std::max<std::int64_t>(4, len * 2 / kFp + 1);
    for (std::int64_t i = 0; i <= n; ++i) {
      const std::int64_t u = n - i;
      const std::int64_t x = (u * u * s.a.x + 2 * i * u * s.c.x + i * i * s.b.x) / (n * n);
      const std::int64_t y = (u * u * s.a.y + 2 * i * u * s.c.y + i * i * s.b.y) / (n * n);
      stamp(x, y, radius);
    }
  }

  GrayImage to_image(int ink) const {
    GrayImage img(w_, h_);
    for (std::size_t i = 0; i < coverage_.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(255 - coverage_[i] * ink / 256);
    }
    return img;
  }

 private:
  static std::int64_t sq(std::int64_t v) { return v * v; }

  void stamp(std::int64_t cx, std::int64_t cy, std::int64_t radius) {
    const std::int64_t reach = radius + kFp;
    const std::int64_t x0 = std::max<std::int64_t>(0, (cx - reach) / kFp - 1);
    const std::int64_t x1 = std::min<std::int64_t>(static_cast<std::int64_t>(w_) - 1, (cx + reach) / kFp + 1);
    const std::int64_t y0 = std::max<std::int64_t>(0, (cy - reach) / kFp - 1);
    const std::int64_t y1 = std::min<std::int64_t>(static_cast<std::int64_t>(h_) - 1, (cy + reach) / kFp + 1);
    for (std::int64_t py = y0; py <= y1; ++py) {
      for (std::int64_t px = x0; px <= x1; ++px) {
        const std::int64_t d = isqrt(sq(px * kFp + kFp / 2 - cx) + sq(py * kFp + kFp / 2 - cy));
        // Full coverage inside the pen, linear falloff over one pixel.
        const std::int64_t cov = std::clamp<std::int64_t>((radius + kFp / 2 - d) * 256 / kFp, 0, 256);
        auto& cell = coverage_[static_cast<std::size_t>(py) * w_ + static_cast<std::size_t>(px)];
        cell = std::max<int>(cell, static_cast<int>(cov));
      }
    }
  }

  std::size_t w_, h_;
  std::vector<int> coverage_;
};

}  // namespace synth_detail

/// Renders one line of pseudo-handwriting. Glyph choice and
/// point noise come from `content_seed`; everything else from the style.
inline GrayImage render_line(const WriterStyle& style, Script script, const ImageSizePolicy& size,
                             std::uint64_t content_seed) {
  using namespace synth_detail;
  if (size.canvas_height < 24) throw DomainError("canvas_height must be >= 24");
  if (size.min_glyphs < 1 || size.max_glyphs < size.min_glyphs) {
    throw DomainError("invalid glyph count range");
  }
  static const std::vector<Glyph> latin = glyph_set(Script::latin);
  static const std::vector<Glyph> block = glyph_set(Script::block);
  const auto& glyphs = script == Script::latin ? latin : block;

  Rng rng(content_seed);
  const auto h = static_cast<std::int64_t>(size.canvas_height);
  // Body height and baseline as fractions of the canvas.
  const std::int64_t body = script == Script::latin ? h * kFp * 3 / 8 : h * kFp * 9 / 16;
  const std::int64_t baseline = script == Script::latin ? h * kFp * 5 / 8 : h * kFp * 25 / 32;
  const std::int64_t glyph_w = script == Script::latin ? body * 3 / 4 : body;

  const std::int64_t radius = (1200 + 3800 * style.q[WriterStyle::thickness] / 1000) * kFp / 2000;
  const std::int64_t shear = tan_q16(style.q[WriterStyle::slant] - 500);
  const std::int64_t bulge = (style.q[WriterStyle::jitter] - 500) * 6 * body / 10000;
  const std::int64_t spacing = (1000 + 19 * style.q[WriterStyle::spacing]) * kFp / 1000;
  const std::int64_t wobble = style.q[WriterStyle::wobble] * 8 * kFp / 1000;
  const std::int64_t noise = body * 6 / 100;  // content-driven point displacement
  const std::int64_t margin = 6 * kFp;

  const auto count = static_cast<std::size_t>(uniform_int(
      rng, static_cast<std::int64_t>(size.min_glyphs), static_cast<std::int64_t>(size.max_glyphs)));
  const std::int64_t phase = uniform_int(rng, 0, 1023);
  // Worst-case shear displacement keeps slanted strokes on the canvas.
  const std::int64_t lean = std::abs(shear) * h * kFp / 65536;

  std::vector<Stroke> strokes;
  std::int64_t cursor = margin + lean;
  Point previous_end{-1, -1};
  for (std::size_t k = 0; k < count; ++k) {
    const Glyph& g = glyphs[uniform_index(rng, glyphs.size())];
    const std::int64_t base = baseline + wobble * wave(phase + static_cast<std::int64_t>(k) * 150) / 1024;
    auto place = [&](Point p) {
      Point q{cursor + p.x * glyph_w / kGlyphUnit + uniform_int(rng, -noise, noise),
              base - body + p.y * body / kGlyphUnit + uniform_int(rng, -noise, noise)};
      q.x += shear * (base - q.y) / 65536;
      return q;
    };
    std::vector<Stroke> placed;
    for (const auto& s : g) {
      Stroke st{place(s.a), place(s.c), place(s.b)};
      const std::int64_t dx = st.b.x - st.a.x, dy = st.b.y - st.a.y;
      const std::int64_t len = isqrt(dx * dx + dy * dy);
      if (len > 0) {
        st.c.x -= dy * bulge / len;
        st.c.y += dx * bulge / len;
      }
      placed.push_back(st);
    }
    if (script == Script::latin && previous_end.x >= 0) {
      // Cursive ligature dipping toward the baseline.
      const Point start = placed.front().a;
      const Point mid{(previous_end.x + start.x) / 2, std::max(previous_end.y, start.y) + body / 8};
      strokes.push_back({previous_end, mid, start});
    }
    previous_end = placed.back().b;
    strokes.insert(strokes.end(), placed.begin(), placed.end());
    cursor += glyph_w + spacing;
  }
  const std::int64_t width_fp = cursor + margin + lean;
  const auto width = static_cast<std::size_t>(std::max<std::int64_t>(h, width_fp / kFp + 1));

  Canvas canvas(width, size.canvas_height);
  for (const auto& s : strokes) canvas.stroke(s, radius);
  return canvas.to_image(235);
}

/// All samples of a corpus, writer-major. Deterministic in `options.seed`.
inline std::vector<SyntheticSample> synthesize_corpus(const SynthOptions& options) {
  if (options.num_writers < 2) throw DomainError("synthetic corpus needs at least 2 writers");
  if (options.samples_per_writer < 3) throw DomainError("synthetic corpus needs at least 3 samples per writer");
  const auto styles = generate_writer_styles(options.num_writers, options.seed);
  std::vector<SyntheticSample> out;
  out.reserve(options.num_writers * options.samples_per_writer);
  for (std::size_t w = 0; w < options.num_writers; ++w) {
    for (std::size_t s = 0; s < options.samples_per_writer; ++s) {
      const std::uint64_t content = derive_seed(options.seed, (w << 20) | s);
      out.push_back({synthetic_writer_label(w), w, s,
                     render_line(styles[w], options.script, options.size, content)});
    }
  }
  return out;
}

/**
 * Writes images/<writer>_<sample>.pgm under `out_dir` plus manifest.jsonl
 * with a 4:1:1 per-writer split seeded by the corpus seed. Returns the
 * manifest entries (paths relative to `out_dir`).
 */
inline std::vector<ManifestEntry> generate_synthetic_corpus(const SynthOptions& options,
                                                            const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const auto samples = synthesize_corpus(options);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create '" + (out_dir / "images").string() + "': " + ec.message());
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    char name[64];
    std::snprintf(name, sizeof name, "images/%s_%03zu.pgm", s.writer.c_str(), s.sample_index);
    write_pgm(out_dir / name, s.image);
    entries.push_back({name, s.writer, {}});
  }
  entries = split_per_writer(std::move(entries), options.seed);
  write_manifest(out_dir / "manifest.jsonl", entries);
  return entries;
}

}  // namespace deepwriter
