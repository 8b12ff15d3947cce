#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rscope/encoder.hpp"
#include "rscope/errors.hpp"
#include "rscope/pipeline/synthetic.hpp"
#include "rscope/rng.hpp"

using namespace rscope;
using namespace rscope::encoder;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Image img(h, w, 3);
  Rng rng(seed);
  for (auto& v : img.data) v = rng.uniform(0.0, 255.0);
  return img;
}

EncoderConfig tiny() {
  EncoderConfig c = EncoderConfig::desk();
  c.image_height = c.image_width = 32;
  c.embed_dim = 24;
  c.num_heads = 3;
  c.num_layers = 3;
  c.seed = 11;
  return c;
}

// Kahan-compensated column mean, independent of the Eigen reduction.
Vector compensated_mean(const Matrix& rows) {
  Vector out(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      const double y = rows(r, c) - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    out[c] = sum / static_cast<double>(rows.rows());
  }
  return out;
}

}  // namespace

TEST_CASE("config presets and validation") {
  const auto p = EncoderConfig::paper();
  CHECK(p.num_patches() == 196);
  CHECK(p.num_visible() == 49);
  CHECK(p.head_dim() == 64);
  CHECK(p.num_layers == 12);
  CHECK(p.num_heads == 12);
  p.validate();
  EncoderConfig bad = p;
  bad.image_height = 225;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.num_heads = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.masking_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patchify") {
  SUBCASE("224x224 with 16 px patches gives 196") {
    CHECK(patchify(Image(224, 224, 3), 16).size() == 196);
  }
  SUBCASE("single patch equals the image") {
    const auto img = random_image(16, 16, 1);
    const auto p = patchify(img, 16);
    REQUIRE(p.size() == 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(p[0][static_cast<Eigen::Index>(i)] == img.data[i]);
  }
  SUBCASE("constant image gives identical patches") {
    const auto p = patchify(Image(32, 32, 3, 7.0), 16);
    REQUIRE(p.size() == 4);
    for (const auto& q : p) CHECK(q == p[0]);
  }
  SUBCASE("raster block order") {
    Image img(32, 32, 3);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) img.at(y, x, 0) = double((y / 16) * 2 + x / 16);
    const auto p = patchify(img, 16);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i][0] == double(i));
  }
  CHECK_THROWS_AS(patchify(Image(30, 32, 3), 16), ConfigError);
}

TEST_CASE("mask_select") {
  const auto v = mask_select(196, 0.75, 42);
  CHECK(v.size() == 49);
  CHECK(std::is_sorted(v.begin(), v.end()));
  CHECK(std::adjacent_find(v.begin(), v.end()) == v.end());
  CHECK(v.front() >= 0);
  CHECK(v.back() < 196);

  const auto all = mask_select(196, 0.0, 42);
  CHECK(all.size() == 196);
  CHECK(all.front() == 0);
  CHECK(all.back() == 195);

  const auto one = mask_select(4, 0.75, 5);
  CHECK(one.size() == 1);
  CHECK(mask_select(4, 0.75, 5) == one);

  CHECK(mask_select(196, 0.75, 43) != v);
  CHECK_THROWS_AS(mask_select(10, 1.0, 0), ConfigError);
}

TEST_CASE("mask_select is uniform over patches") {
  // Every patch should be kept about N_v/N of the time.
  std::vector<int> hits(16, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s)
    for (auto i : mask_select(16, 0.75, static_cast<std::uint64_t>(s))) ++hits[static_cast<std::size_t>(i)];
  for (int h : hits) CHECK(std::abs(h / double(trials) - 0.25) < 0.03);
}

TEST_CASE("head_output") {
  Matrix v(3, 2);
  v << 1, 2, 3, 4, 5, 9;
  CHECK(head_output(Matrix::Identity(3, 3), v) == v);
  const Matrix uniform = Matrix::Constant(3, 3, 1.0 / 3.0);
  const Matrix o = head_output(uniform, v);
  // column means of V: (1+3+5)/3 = 3, (2+4+9)/3 = 5
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(o(i, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(o(i, 1) == doctest::Approx(5.0).epsilon(1e-15));
  }
  CHECK(head_output(uniform, Matrix::Zero(3, 2)).isZero(0));
  CHECK_THROWS_AS(head_output(Matrix::Identity(3, 3), Matrix::Zero(2, 2)), ContractError);
}

TEST_CASE("mean_patch") {
  Matrix same(5, 3);
  for (Eigen::Index i = 0; i < 5; ++i) same.row(i) << 1.5, -2, 4;
  CHECK((mean_patch(same, 5) - same.row(0).transpose()).norm() == 0.0);

  Matrix two(2, 2);
  two << 1, 0, 0, 1;
  const Vector m = mean_patch(two, 2);
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.5);

  Matrix rnd(49, 64);
  Rng rng(9);
  for (Eigen::Index i = 0; i < rnd.size(); ++i) rnd.data()[i] = rng.normal() * 100.0;
  const Vector got = mean_patch(rnd, 49), want = compensated_mean(rnd);
  for (Eigen::Index k = 0; k < 64; ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12 * std::max(1.0, std::abs(want[k])));

  CHECK_THROWS_AS(mean_patch(two, 0), ContractError);
}

TEST_CASE("forward trace shapes and row-stochastic attention") {
  const Encoder enc(tiny());
  const auto trace = enc.forward(random_image(32, 32, 2), 7);
  const std::size_t t = tiny().num_visible() + 1;
  CHECK(trace.visible_indices.size() == 4);
  CHECK(trace.layers.size() == 3);
  for (const auto& l : trace.layers) {
    CHECK(static_cast<std::size_t>(l.tokens.rows()) == t);
    CHECK(l.tokens.cols() == 24);
    REQUIRE(l.attention.size() == 3);
    for (std::size_t h = 0; h < 3; ++h) {
      CHECK(l.values[h].cols() == 8);
      for (Eigen::Index i = 0; i < l.attention[h].rows(); ++i) {
        CHECK(std::abs(l.attention[h].row(i).sum() - 1.0) < 1e-6);
        CHECK(l.attention[h].row(i).minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("forward is deterministic and seeds matter") {
  const Encoder enc(tiny());
  const auto img = random_image(32, 32, 3);
  const auto a = enc.forward(img, 5), b = enc.forward(img, 5);
  CHECK(a == b);
  CHECK(encode_archive(to_archive(a)) == encode_archive(to_archive(b)));
  const Encoder other(tiny());
  CHECK(other.forward(img, 5) == a);
  CHECK(enc.forward(img, 6).visible_indices != a.visible_indices);
}

TEST_CASE("single token without CLS attends to itself") {
  auto cfg = tiny();
  cfg.image_height = cfg.image_width = 8;
  cfg.masking_ratio = 0.0;
  cfg.include_cls = false;
  const auto trace = Encoder(cfg).forward(random_image(8, 8, 4));
  REQUIRE(trace.num_tokens() == 1);
  for (const auto& l : trace.layers)
    for (const auto& a : l.attention) CHECK(a(0, 0) == 1.0);
}

TEST_CASE("traced layer output is reproduced from traced A and V") {
  const Encoder enc(tiny());
  const auto img = random_image(32, 32, 5);
  const auto trace = enc.forward(img, 1);
  Matrix z_prev = oracle::embed_visible(enc, img, trace.visible_indices);
  for (std::size_t l = 1; l <= trace.num_layers(); ++l) {
    const Matrix expect = oracle::reference_block(z_prev, trace.layer(l), enc.block_weights(l));
    CHECK((expect - trace.layer(l).tokens).cwiseAbs().maxCoeff() < 1e-5);
    z_prev = trace.layer(l).tokens;
  }
}

TEST_CASE("permuting visible slots permutes outputs") {
  const Encoder enc(tiny());
  const auto img = random_image(32, 32, 6);
  const std::vector<std::int64_t> order = {3, 9, 12, 14};
  const std::vector<std::int64_t> shuffled = {14, 3, 12, 9};
  const auto a = enc.forward_visible(img, order);
  const auto b = enc.forward_visible(img, shuffled);
  for (std::size_t l = 1; l <= 3; ++l) {
    CHECK((a.layer(l).tokens.row(0) - b.layer(l).tokens.row(0)).cwiseAbs().maxCoeff() < 1e-5);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto j = std::find(shuffled.begin(), shuffled.end(), order[i]) - shuffled.begin();
      CHECK((a.layer(l).tokens.row(Eigen::Index(i + 1)) - b.layer(l).tokens.row(Eigen::Index(j + 1)))
                .cwiseAbs()
                .maxCoeff() < 1e-5);
    }
  }
}

TEST_CASE("forward rejects wrong image size and bad indices") {
  const Encoder enc(tiny());
  CHECK_THROWS_AS(enc.forward(random_image(16, 16, 1)), ContractError);
  const std::vector<std::int64_t> bad = {99};
  CHECK_THROWS_AS(enc.forward_visible(random_image(32, 32, 1), bad), ContractError);
}

TEST_CASE("non-finite input is reported with the layer") {
  const Encoder enc(tiny());
  auto img = random_image(32, 32, 1);
  img.data.assign(img.data.size(), std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(enc.forward(img, 0), NumericError);
}

TEST_CASE("archive naming scheme and round trip") {
  const Encoder enc(tiny());
  const auto trace = enc.forward(random_image(32, 32, 8), 3);
  const auto archive = to_archive(trace);
  CHECK(archive.find("z/layer1"));
  CHECK(archive.find("z/layer3"));
  CHECK(archive.find("attn/layer2/head3"));
  CHECK(archive.find("value/layer3/head1"));
  CHECK(archive.find("visible_idx"));
  CHECK_FALSE(archive.find("z/layer0"));
  CHECK(archive.records.size() == 1 + 3 * (1 + 2 * 3));
  const auto back = from_archive(read_archive(encode_archive(archive)));
  CHECK(back.layers == trace.layers);
  CHECK(back.visible_indices == trace.visible_indices);
  CHECK(back.has_cls);

  auto broken = archive;
  broken.records.erase(std::find_if(broken.records.begin(), broken.records.end(),
                                    [](const auto& r) { return r.name == "value/layer2/head2"; }));
  try {
    from_archive(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("value/layer2/head2") != std::string::npos);
  }
}

TEST_CASE("f32 traces without metadata are accepted") {
  const Encoder enc(tiny());
  const auto trace = enc.forward(random_image(32, 32, 8), 3);
  TensorArchive a;
  a.add(TensorRecord::from<std::int64_t>("visible_idx", {trace.visible_indices.size()},
                                         std::span<const std::int64_t>(trace.visible_indices)));
  for (std::size_t l = 1; l <= 3; ++l) {
    auto put = [&](const std::string& name, const Matrix& m) {
      std::vector<float> f(m.data(), m.data() + m.size());
      a.add(TensorRecord::from<float>(name, {std::uint64_t(m.rows()), std::uint64_t(m.cols())},
                                      std::span<const float>(f)));
    };
    put(tokens_record(l), trace.layer(l).tokens);
    for (std::size_t h = 1; h <= 3; ++h) {
      put(attention_record(l, h), trace.layer(l).attention[h - 1]);
      put(values_record(l, h), trace.layer(l).values[h - 1]);
    }
  }
  const auto back = from_archive(a);
  CHECK(back.has_cls);
  CHECK(back.num_layers() == 3);
  CHECK(back.num_heads() == 3);
  CHECK((back.layer(2).tokens - trace.layer(2).tokens).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("paper preset trace geometry") {
  const Encoder enc(EncoderConfig::paper());
  const auto img = pipeline::synthetic_image(224, 224, 0, 0, 1);
  const auto trace = enc.forward(img, 3);
  CHECK(trace.visible_indices.size() == 49);
  REQUIRE(trace.layers.size() == 12);
  CHECK(trace.layer(12).tokens.rows() == 50);
  CHECK(trace.layer(12).tokens.cols() == 768);
  CHECK(trace.layer(1).attention.size() == 12);
  CHECK(trace.layer(7).attention[4].rows() == 50);
  CHECK(trace.layer(7).attention[4].cols() == 50);
  CHECK(trace.layer(7).values[4].cols() == 64);
}
