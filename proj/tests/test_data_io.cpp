#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "deepwriter/deepwriter.hpp"
#include "support/fixtures.hpp"

using namespace deepwriter;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) { return detail::read_file_bytes(path); }

std::vector<ManifestEntry> writer_entries(const std::map<std::string, std::size_t>& counts) {
  std::vector<ManifestEntry> entries;
  for (const auto& [writer, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) entries.push_back({writer + "/" + std::to_string(i) + ".png", writer, {}});
  }
  return entries;
}

Checkpoint small_checkpoint(bool with_state) {
  Rng rng(4);
  auto net = Network<float>::build(dwtest::reduced_spec(3), 2, rng);
  net.set_pixel_mean(0.8125f);
  auto state = OptimState<float>::zeros_like(net.params());
  for (auto& v : state.velocities) v.weights.fill(0.25f);
  return make_checkpoint(net, {"anna", "bert", "cleo"}, 42, with_state ? &state : nullptr);
}

}  // namespace

TEST(ImageIo, PgmFixture) {
  dwtest::TempDir dir("pgm");
  write_bytes(dir / "a.pgm", std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x55\xaa\xff", 4));
  const auto img = load_image(dir / "a.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 85, 170, 255}));
}

TEST(ImageIo, PgmRoundTrip) {
  dwtest::TempDir dir("pgm-rt");
  GrayImage img(7, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 11);
  write_pgm(dir / "x.pgm", img);
  EXPECT_EQ(load_image(dir / "x.pgm"), img);
}

TEST(ImageIo, RgbPngConvertsToGray) {
  dwtest::TempDir dir("png");
  write_png(dir / "c.png", 3, 2, std::vector<std::uint8_t>(18, 100), /*rgb=*/true);
  const auto img = load_image(dir / "c.png");
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.height, 2u);
  for (auto p : img.pixels) EXPECT_EQ(p, 100);
}

TEST(ImageIo, GrayPngRoundTrip) {
  dwtest::TempDir dir("png-gray");
  const std::vector<std::uint8_t> px{1, 2, 3, 4, 250, 6};
  write_png(dir / "g.png", 2, 3, px, false);
  EXPECT_EQ(load_image(dir / "g.png").pixels, px);
}

TEST(ImageIo, ErrorsNameThePath) {
  dwtest::TempDir dir("img-err");
  const auto missing = (dir / "nope.png").string();
  try {
    load_image(missing);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(missing), std::string::npos);
  }
  write_bytes(dir / "t.pgm", "P5\n4 4\n255\n\x01\x02");
  EXPECT_THROW(load_image(dir / "t.pgm"), IoError);
  write_bytes(dir / "j.jpg", "\xff\xd8\xff\xe0garbage");
  EXPECT_THROW(load_image(dir / "j.jpg"), IoError);
}

TEST(Manifest, RoundTripResolvesRelativePaths) {
  dwtest::TempDir dir("manifest");
  const std::vector<ManifestEntry> entries{{"images/a.pgm", "w1", Split::train},
                                           {"/abs/b.png", "w2", Split::test},
                                           {"c.pgm", "w1", std::nullopt}};
  write_manifest(dir / "m.jsonl", entries);
  EXPECT_EQ(read_manifest(dir / "m.jsonl", false), entries);
  const auto resolved = read_manifest(dir / "m.jsonl");
  EXPECT_EQ(resolved[0].path, (dir.path() / "images/a.pgm").string());
  EXPECT_EQ(resolved[1].path, "/abs/b.png");
}

TEST(Manifest, MalformedLines) {
  dwtest::TempDir dir("manifest-bad");
  write_bytes(dir / "a.jsonl", "{\"path\": \"x\"}\n");
  EXPECT_THROW(read_manifest(dir / "a.jsonl"), IoError);
  write_bytes(dir / "b.jsonl", "\n{not json\n");
  try {
    read_manifest(dir / "b.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("b.jsonl:2"), std::string::npos) << e.what();
  }
  write_bytes(dir / "c.jsonl", "{\"path\": \"x\", \"writer\": \"w\", \"split\": \"dev\"}\n");
  EXPECT_THROW(read_manifest(dir / "c.jsonl"), DomainError);
  EXPECT_THROW(read_manifest(dir / "none.jsonl"), IoError);
}

TEST(Manifest, LabelsAreSortedAndDistinct) {
  const auto labels = writer_labels(writer_entries({{"zed", 1}, {"amy", 2}, {"kim", 1}}));
  EXPECT_EQ(labels, (std::vector<std::string>{"amy", "kim", "zed"}));
  EXPECT_EQ(label_index(labels, "kim"), 1u);
  EXPECT_THROW(label_index(labels, "bob"), DomainError);
}

TEST(Manifest, DirectoryAdapter) {
  dwtest::TempDir dir("tree");
  fs::create_directories(dir / "w2/sub");
  fs::create_directories(dir / "w1");
  write_pgm(dir / "w1/a.pgm", GrayImage(2, 2));
  write_pgm(dir / "w2/sub/b.PGM", GrayImage(2, 2));
  write_bytes(dir / "w2/notes.txt", "x");
  write_bytes(dir / "loose.pgm", "x");
  const auto entries = manifest_from_directory(dir.path());
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0], (ManifestEntry{"w1/a.pgm", "w1", {}}));
  EXPECT_EQ(entries[1], (ManifestEntry{"w2/sub/b.PGM", "w2", {}}));
  EXPECT_THROW(manifest_from_directory(dir / "w1/a.pgm"), IoError);
}

TEST(Split, CountsExamples) {
  EXPECT_EQ(split_counts(6), (SplitCounts{4, 1, 1}));
  EXPECT_EQ(split_counts(7), (SplitCounts{5, 1, 1}));
  EXPECT_EQ(split_counts(12), (SplitCounts{8, 2, 2}));
  EXPECT_EQ(split_counts(3), (SplitCounts{1, 1, 1}));
  EXPECT_EQ(split_counts(4), (SplitCounts{2, 1, 1}));
  EXPECT_EQ(split_counts(30), (SplitCounts{20, 5, 5}));
  EXPECT_THROW(split_counts(2), DomainError);
}

TEST(Split, CountsAreExhaustiveAndNonEmpty) {
  for (std::size_t n = 3; n < 500; ++n) {
    const auto c = split_counts(n);
    EXPECT_EQ(c.train + c.val + c.test, n);
    EXPECT_GE(c.train, 1u);
    EXPECT_GE(c.val, 1u);
    EXPECT_GE(c.test, 1u);
    EXPECT_GE(c.train, c.val);
  }
}

TEST(Split, PerWriterDeterministicAndExhaustive) {
  const auto entries = writer_entries({{"a", 6}, {"b", 13}, {"c", 3}});
  const auto s1 = split_per_writer(entries, 9);
  EXPECT_EQ(s1, split_per_writer(entries, 9));
  EXPECT_NE(s1, split_per_writer(entries, 10));
  std::map<std::string, std::map<Split, std::size_t>> counts;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].path, entries[i].path);
    ASSERT_TRUE(s1[i].split.has_value());
    ++counts[s1[i].writer][*s1[i].split];
  }
  for (const auto& [writer, by_split] : counts) {
    std::size_t n = 0;
    for (const auto& [s, k] : by_split) n += k;
    const auto c = split_counts(n);
    EXPECT_EQ(by_split.at(Split::train), c.train) << writer;
    EXPECT_EQ(by_split.at(Split::val), c.val) << writer;
    EXPECT_EQ(by_split.at(Split::test), c.test) << writer;
  }
}

TEST(Split, TooFewItemsNamesWriter) {
  try {
    split_per_writer(writer_entries({{"ok", 5}, {"scarce", 2}}), 1);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("scarce"), std::string::npos);
  }
}

TEST(Split, LoadDatasetNeedsSplits) {
  dwtest::TempDir dir("load");
  write_pgm(dir / "a.pgm", GrayImage(4, 4, 10));
  std::vector<ManifestEntry> entries{{(dir / "a.pgm").string(), "w", Split::val}};
  const auto d = load_dataset(entries);
  EXPECT_EQ(d.val.size(), 1u);
  EXPECT_EQ(d.val[0].image.pixels[0], 10);
  entries[0].split.reset();
  EXPECT_THROW(load_dataset(entries), DomainError);
}

TEST(Checkpoint, RoundTripWithVelocities) {
  dwtest::TempDir dir("ckpt");
  const auto c = small_checkpoint(true);
  save_checkpoint(c, dir / "m.dwck");
  const auto back = load_checkpoint(dir / "m.dwck");
  EXPECT_EQ(back, c);
  const auto net = network_from_checkpoint<float>(back);
  EXPECT_EQ(net.streams(), 2);
  EXPECT_EQ(net.pixel_mean(), 0.8125f);
  const auto state = optim_state_from_checkpoint(back, net);
  EXPECT_EQ(state.iteration, 42);
  EXPECT_EQ(state.velocities[0].weights[0], 0.25f);
  EXPECT_EQ(state.velocities[0].biases[0], 0.0f);
  EXPECT_EQ(make_checkpoint(net, back.labels, 42, &state), c);
}

TEST(Checkpoint, EncodingIsStable) {
  const auto c = small_checkpoint(false);
  EXPECT_EQ(encode_checkpoint(c), encode_checkpoint(decode_checkpoint(encode_checkpoint(c))));
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DWCK");
  EXPECT_EQ(bytes[4], 1);
}

TEST(Checkpoint, AnyFlippedByteIsDetected) {
  const auto bytes = encode_checkpoint(small_checkpoint(false));
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    auto bad = bytes;
    const std::size_t pos = 8 + uniform_index(rng, bad.size() - 8);
    bad[pos] ^= static_cast<std::uint8_t>(1 + uniform_index(rng, 255));
    EXPECT_THROW(decode_checkpoint(bad), CorruptFileError) << pos;
  }
}

TEST(Checkpoint, TruncationIsCorrupt) {
  const auto bytes = encode_checkpoint(small_checkpoint(false));
  for (std::size_t keep : {0u, 3u, 10u, 100u}) {
    EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + keep)),
                 CorruptFileError);
  }
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1)), CorruptFileError);
}

TEST(Checkpoint, VersionAndFingerprintMismatch) {
  auto c = small_checkpoint(false);
  c.version = 2;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), IncompatibleError);
  c = small_checkpoint(false);
  c.fingerprint ^= 1;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), IncompatibleError);
}

TEST(Checkpoint, MissingTensorIsIncompatible) {
  auto c = small_checkpoint(false);
  c.tensors.erase(c.tensors.begin() + 2);
  try {
    network_from_checkpoint<float>(c);
    FAIL();
  } catch (const IncompatibleError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2.weight"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(load_checkpoint("/nonexistent/m.dwck"), IoError); }

TEST(Synth, StylesAreMutuallyDistinct) {
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    const auto styles = generate_writer_styles(40, seed);
    ASSERT_EQ(styles.size(), 40u);
    for (std::size_t i = 0; i < styles.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        int far = 0;
        for (int p = 0; p < WriterStyle::kCount; ++p) far += std::abs(styles[i].q[p] - styles[j].q[p]) >= 100;
        EXPECT_GE(far, 2) << i << " " << j;
      }
      for (int p = 0; p < WriterStyle::kCount; ++p) {
        EXPECT_GE(styles[i].q[p], 0);
        EXPECT_LE(styles[i].q[p], 1000);
      }
    }
  }
}

TEST(Synth, StyleRanges) {
  WriterStyle s;
  EXPECT_DOUBLE_EQ(s.thickness_px(), 1.2);
  EXPECT_DOUBLE_EQ(s.slant_rad(), -0.5);
  EXPECT_DOUBLE_EQ(s.jitter_ratio(), -0.3);
  s.q.fill(1000);
  EXPECT_DOUBLE_EQ(s.thickness_px(), 5.0);
  EXPECT_DOUBLE_EQ(s.spacing_px(), 20.0);
  EXPECT_DOUBLE_EQ(s.wobble_px(), 8.0);
}

TEST(Synth, CorpusShapeAndLabels) {
  SynthOptions o;
  o.num_writers = 3;
  o.samples_per_writer = 4;
  o.seed = 5;
  const auto samples = synthesize_corpus(o);
  ASSERT_EQ(samples.size(), 12u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i].writer_index, i / 4);
    EXPECT_EQ(samples[i].sample_index, i % 4);
    EXPECT_EQ(samples[i].writer, synthetic_writer_label(i / 4));
    EXPECT_EQ(samples[i].image.height, 64u);
    EXPECT_GE(samples[i].image.width, 64u);
    const auto dark = std::count_if(samples[i].image.pixels.begin(), samples[i].image.pixels.end(),
                                    [](std::uint8_t p) { return p < 128; });
    EXPECT_GT(dark, 0);
  }
  EXPECT_NE(samples[0].image, samples[1].image);
  EXPECT_EQ(synthetic_writer_label(7), "w007");
}

TEST(Synth, SameSeedSameFiles) {
  dwtest::TempDir a("synth-a"), b("synth-b");
  SynthOptions o;
  o.num_writers = 2;
  o.samples_per_writer = 3;
  o.seed = 11;
  o.script = Script::block;
  const auto ea = generate_synthetic_corpus(o, a.path());
  const auto eb = generate_synthetic_corpus(o, b.path());
  EXPECT_EQ(ea, eb);
  EXPECT_EQ(read_bytes(a / "manifest.jsonl"), read_bytes(b / "manifest.jsonl"));
  for (const auto& e : ea) EXPECT_EQ(read_bytes(a / e.path), read_bytes(b / e.path)) << e.path;
  o.seed = 12;
  dwtest::TempDir c("synth-c");
  generate_synthetic_corpus(o, c.path());
  EXPECT_NE(read_bytes(a / ea[0].path), read_bytes(c / ea[0].path));
}

TEST(Synth, ScriptsDiffer) {
  SynthOptions o;
  o.num_writers = 2;
  o.samples_per_writer = 3;
  const auto latin = synthesize_corpus(o);
  o.script = Script::block;
  EXPECT_NE(latin[0].image, synthesize_corpus(o)[0].image);
  EXPECT_EQ(parse_script("block"), Script::block);
  EXPECT_THROW(parse_script("cursive"), DomainError);
}

TEST(Synth, CountErrors) {
  SynthOptions o;
  o.num_writers = 1;
  EXPECT_THROW(synthesize_corpus(o), DomainError);
  o.num_writers = 2;
  o.samples_per_writer = 2;
  EXPECT_THROW(synthesize_corpus(o), DomainError);
}
