#include <doctest.h>

#include <cmath>
#include <numeric>

#include "afformer/attention.hpp"
#include "afformer/error.hpp"
#include "afformer/parallel.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace afformer;

namespace {

double max_diff(const Matrix& a, const Matrix& b) { return testing::max_abs_diff(a.data(), b.data()); }

AffineField uniform_field(std::size_t rows, std::size_t cols, std::size_t l, const AffineParams& a) {
  AffineField f(rows, cols, l);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      f.params(r, c) = a;
      f.set_valid(r, c, true);
    }
  }
  return f;
}

}  // namespace

TEST_CASE("multi_head_attention trivial cases") {
  Rng rng(1);
  const AttentionLayer layer = AttentionLayer::seeded(8, 2, 3);
  const Matrix q = testing::random_matrix(rng, 5, 8);
  const Matrix one = testing::random_matrix(rng, 1, 8);
  const AttentionOutput single = multi_head_attention(q, one, one, layer);
  const std::vector<double> v = oracle::project(layer.wv, one.row(0));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(single.message(i, c) == doctest::Approx(v[c]).epsilon(1e-14));
  }
  Matrix copies(4, 8);
  for (std::size_t j = 0; j < 4; ++j) std::copy(one.row(0).begin(), one.row(0).end(), copies.row(j).begin());
  const AttentionOutput repeated = multi_head_attention(q, copies, copies, layer);
  CHECK(max_diff(repeated.message, single.message) <= 1e-14);
}

TEST_CASE("multi_head_attention equals the naive oracle") {
  Rng rng(2);
  SUBCASE("4 tokens, 1 head") {
    const AttentionLayer layer = AttentionLayer::seeded(6, 1, 4);
    const Matrix q = testing::random_matrix(rng, 4, 6);
    const Matrix kv = testing::random_matrix(rng, 4, 6);
    CHECK(max_diff(multi_head_attention(q, kv, kv, layer).message, oracle::attention(q, kv, layer)) <= 1e-10);
  }
  SUBCASE("random sizes up to 16 tokens") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t heads = 1 + rng.below(4);
      const std::size_t dim = heads * (1 + rng.below(4));
      const AttentionLayer layer = AttentionLayer::seeded(dim, heads, rng.next());
      const Matrix q = testing::random_matrix(rng, 1 + rng.below(16), dim, -2, 2);
      const Matrix kv = testing::random_matrix(rng, 1 + rng.below(16), dim, -2, 2);
      const AttentionOutput out = multi_head_attention(q, kv, kv, layer);
      CHECK(max_diff(out.message, oracle::attention(q, kv, layer)) <= 1e-10);
      for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
          double sum = 0.0;
          for (std::size_t j = 0; j < kv.rows(); ++j) sum += out.weights.at(i, j, h);
          CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("permuting target tokens permutes weights and keeps the message") {
  Rng rng(3);
  const AttentionLayer layer = AttentionLayer::seeded(8, 4, 5);
  const Matrix q = testing::random_matrix(rng, 6, 8);
  const Matrix kv = testing::random_matrix(rng, 9, 8);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[4]);
  Matrix shuffled(9, 8);
  for (std::size_t j = 0; j < 9; ++j) std::copy(kv.row(perm[j]).begin(), kv.row(perm[j]).end(), shuffled.row(j).begin());
  const AttentionOutput a = multi_head_attention(q, kv, kv, layer);
  const AttentionOutput b = multi_head_attention(q, shuffled, shuffled, layer);
  CHECK(max_diff(a.message, b.message) <= 1e-14);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 9; ++j) {
      for (std::size_t h = 0; h < 4; ++h) CHECK(b.weights.at(i, j, h) == doctest::Approx(a.weights.at(i, perm[j], h)).epsilon(1e-14));
    }
  }
}

TEST_CASE("masked keys are excluded") {
  Rng rng(4);
  const AttentionLayer layer = AttentionLayer::seeded(4, 2, 6);
  const Matrix q = testing::random_matrix(rng, 3, 4);
  const Matrix kv = testing::random_matrix(rng, 5, 4);
  const std::vector<unsigned char> mask{1, 0, 1, 0, 1};
  const AttentionOutput out = multi_head_attention(q, kv, kv, layer, mask);
  CHECK(max_diff(out.message, oracle::attention(q, kv, layer, mask)) <= 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t h = 0; h < 2; ++h) {
      CHECK(out.weights.at(i, 1, h) == 0.0);
      CHECK(out.weights.at(i, 3, h) == 0.0);
    }
  }
  const std::vector<unsigned char> none(5, 0);
  const AttentionOutput empty = multi_head_attention(q, kv, kv, layer, none);
  for (double v : empty.message.data()) CHECK(v == 0.0);
}

TEST_CASE("multi_head_attention errors") {
  const AttentionLayer layer = AttentionLayer::seeded(4, 2, 1);
  CHECK_THROWS_AS(multi_head_attention(Matrix(0, 4), Matrix(2, 4), Matrix(2, 4), layer), InputError);
  CHECK_THROWS_AS(multi_head_attention(Matrix(2, 4), Matrix(0, 4), Matrix(0, 4), layer), InputError);
  CHECK_THROWS_AS(multi_head_attention(Matrix(2, 3), Matrix(2, 4), Matrix(2, 4), layer), DimensionError);
  CHECK_THROWS_AS(multi_head_attention(Matrix(2, 4), Matrix(2, 4), Matrix(3, 4), layer), DimensionError);
  const std::vector<unsigned char> short_mask{1};
  CHECK_THROWS_AS(multi_head_attention(Matrix(2, 4), Matrix(2, 4), Matrix(2, 4), layer, short_mask), DimensionError);
  CHECK_THROWS_AS(AttentionLayer::seeded(6, 4, 1), ConfigError);
  CHECK_THROWS_AS(AttentionLayer::zeros(6, 0), ConfigError);
}

TEST_CASE("global attention block") {
  Rng rng(5);
  const AttentionLayer layer = AttentionLayer::seeded(8, 2, 7);
  const FeatureMap fs = testing::random_map(rng, 8, 12, 8);

  SUBCASE("constant target gives a constant message") {
    const FeatureMap ft(8, 8, 8, 8, std::vector<double>(512, 0.4));
    const GlobalBlockOutput out = global_attention_block(fs, ft, layer);
    for (std::size_t i = 1; i < out.message.cells(); ++i) {
      for (std::size_t c = 0; c < 8; ++c) {
        CHECK(out.message.cell(i)[c] == doctest::Approx(out.message.cell(0)[c]).epsilon(1e-12));
      }
    }
    CHECK(out.updated == ffn_update(fs, out.message, layer));
    CHECK(out.attn.n_source() == 6);
    CHECK(out.attn.n_target() == 4);
  }
  SUBCASE("zero weights leave the features unchanged") {
    const AttentionLayer zero = AttentionLayer::zeros(8, 2);
    const FeatureMap ft = testing::random_map(rng, 8, 8, 8);
    const GlobalBlockOutput out = global_attention_block(fs, ft, zero);
    CHECK(out.updated == fs);
  }
  SUBCASE("message is the x4 upsampled attention over pooled tokens") {
    const FeatureMap ft = testing::random_map(rng, 8, 8, 8);
    const GlobalMessage g = global_message(fs, ft, layer);
    const FeatureMap fs32 = avg_pool2(avg_pool2(fs));
    const FeatureMap ft32 = avg_pool2(avg_pool2(ft));
    const Matrix naive = oracle::attention(fs32.tokens(), ft32.tokens(), layer);
    const FeatureMap expect = upsample_bilinear(FeatureMap::from_tokens(naive, 2, 3, 32), 4);
    CHECK(testing::max_abs_diff(g.message.data(), expect.data()) <= 1e-10);
    CHECK(g.coarse_height == 2);
    CHECK(g.coarse_width == 3);
  }
  SUBCASE("ffn update matches its formula") {
    const FeatureMap m = testing::random_map(rng, 8, 12, 8);
    const FeatureMap out = ffn_update(fs, m, layer);
    FeatureMap mixed = fs;
    for (std::size_t i = 0; i < fs.cells(); ++i) {
      std::vector<double> h = oracle::project(layer.mlp1, m.cell(i));
      for (double& v : h) v = std::max(v, 0.0);
      const std::vector<double> y = oracle::project(layer.mlp2, h);
      for (std::size_t c = 0; c < 8; ++c) mixed.data()[i * 8 + c] += y[c];
    }
    const FeatureMap expect_delta = layer.norm.forward(layer.dwconv.forward(mixed));
    for (std::size_t i = 0; i < out.data().size(); ++i) {
      CHECK(out.data()[i] == doctest::Approx(fs.data()[i] + expect_delta.data()[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ffn_update(fs, testing::random_map(rng, 8, 8, 8), layer), DimensionError);
  }
  SUBCASE("golden output, stable across thread counts") {
    Rng grng(16);
    const AttentionLayer gl = AttentionLayer::seeded(32, 4, 16);
    const FeatureMap a = testing::random_map(grng, 16, 16, 32);
    const FeatureMap b = testing::random_map(grng, 16, 16, 32);
    set_thread_count(1);
    const GlobalBlockOutput one = global_attention_block(a, b, gl);
    set_thread_count(3);
    const GlobalBlockOutput three = global_attention_block(a, b, gl);
    set_thread_count(0);
    CHECK(one.updated == three.updated);
    Tensor t;
    t.dims = {16, 16, 32};
    t.values = one.updated.data();
    CHECK(testing::matches_golden("global_block_16x16x32.aftn", encode_tensor(t)));
  }
  CHECK_THROWS_AS(global_message(testing::random_map(rng, 6, 8, 8), fs, layer), DimensionError);
}

TEST_CASE("local deformable attention") {
  Rng rng(6);
  const AttentionLayer layer = AttentionLayer::seeded(8, 2, 9);
  const std::size_t l = 4;
  const FeatureMap fs = testing::random_map(rng, 16, 16, 8);
  const FeatureMap ft = testing::random_map(rng, 16, 16, 8);



  SUBCASE("identity field with alpha 1 is windowed cross-attention") {
    const AffineField field = uniform_field(4, 4, l, AffineParams::identity());
    for (const FeatureMap* target : {&fs, &ft}) {
      const LocalAttentionOutput out = local_deformable_attention(fs, *target, field, layer, 1.0);
      double worst = 0.0;
      for (std::size_t wr = 0; wr < 4; ++wr) {
        for (std::size_t wc = 0; wc < 4; ++wc) {
          CHECK(out.window_active[wr * 4 + wc] == 1);
          const Matrix expect = oracle::attention(oracle::window_tokens(fs, l, wr, wc), oracle::window_tokens(*target, l, wr, wc), layer);
          for (std::size_t r = 0; r < l; ++r) {
            for (std::size_t c = 0; c < l; ++c) {
              auto got = out.message.cell(wr * l + r, wc * l + c);
              for (std::size_t ch = 0; ch < 8; ++ch) worst = std::max(worst, std::abs(got[ch] - expect(r * l + c, ch)));
            }
          }
        }
      }
      CHECK(worst <= 1e-10);
    }
  }
  SUBCASE("invalid windows give zero messages") {
    AffineField field = uniform_field(4, 4, l, AffineParams::identity());
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) field.set_valid(r, c, false);
    }
    const LocalAttentionOutput out = local_deformable_attention(fs, ft, field, layer, 2.0);
    for (double v : out.message.data()) CHECK(v == 0.0);
    for (unsigned char a : out.window_active) CHECK(a == 0);
  }
  SUBCASE("windows projected entirely off the target are inactive") {
    const AffineField field = uniform_field(4, 4, l, AffineParams::translation(100, 0));
    const LocalAttentionOutput out = local_deformable_attention(fs, ft, field, layer, 1.0);
    for (double v : out.message.data()) CHECK(v == 0.0);
    for (unsigned char a : out.window_active) CHECK(a == 0);
  }
  SUBCASE("translation field equals identity field on a pre-shifted target") {
    const AffineField moved = uniform_field(4, 4, l, AffineParams::translation(5, 0));
    FeatureMap shifted(16, 16, 8, 8);
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c + 5 < 16; ++c) {
        auto src = ft.cell(r, c + 5);
        std::copy(src.begin(), src.end(), shifted.cell(r, c).begin());
      }
    }
    const LocalAttentionOutput a = local_deformable_attention(fs, ft, moved, layer, 1.0);
    const LocalAttentionOutput b =
        local_deformable_attention(fs, shifted, uniform_field(4, 4, l, AffineParams::identity()), layer, 1.0);
    // Window columns 0 and 1 sample x + 5 <= 12 < 16, fully inside.
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t ch = 0; ch < 8; ++ch) CHECK(a.message.at(r, c, ch) == doctest::Approx(b.message.at(r, c, ch)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("partially outside windows attend only over valid samples") {
    const AffineField field = uniform_field(4, 4, l, AffineParams::translation(2, 0));
    const LocalAttentionOutput out = local_deformable_attention(fs, ft, field, layer, 1.0);
    // Window column 3 samples x = 14..17; columns 16, 17 are masked.
    Matrix kv(l * l, 8);
    std::vector<unsigned char> mask(l * l, 0);
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t c = 0; c < l; ++c) {
        const std::size_t x = 12 + c + 2;
        if (x < 16) {
          auto cell = ft.cell(r, x);
          std::copy(cell.begin(), cell.end(), kv.row(r * l + c).begin());
          mask[r * l + c] = 1;
        }
      }
    }
    const Matrix expect = oracle::attention(oracle::window_tokens(fs, l, 0, 3), kv, layer, mask);
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t c = 0; c < l; ++c) {
        for (std::size_t ch = 0; ch < 8; ++ch) CHECK(out.message.at(r, 12 + c, ch) == doctest::Approx(expect(r * l + c, ch)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("result does not depend on worker count") {
    const AffineField field = uniform_field(4, 4, l, recompose_affine({0.2, 0.1, 1.1, 0.9, {0.5, -0.5}}));
    set_thread_count(1);
    const LocalAttentionOutput one = local_deformable_attention(fs, ft, field, layer, 2.0);
    set_thread_count(4);
    const LocalAttentionOutput four = local_deformable_attention(fs, ft, field, layer, 2.0);
    set_thread_count(0);
    CHECK(one.message == four.message);
    CHECK(one.window_active == four.window_active);
  }
  CHECK_THROWS_AS(local_deformable_attention(fs, ft, uniform_field(3, 4, l, {}), layer, 1.0), DimensionError);
  CHECK_THROWS_AS(local_deformable_attention(fs, ft, uniform_field(4, 4, l, {}), layer, 0.5), ConfigError);
}

TEST_CASE("layer weights survive export and import") {
  TensorMap m;
  const AttentionLayer layer = AttentionLayer::seeded(8, 4, 3);
  layer.export_to("blk", m);
  const AttentionLayer back = AttentionLayer::import_from("blk", m);
  CHECK(back.heads == 4);
  CHECK(back.dim == 8);
  CHECK(back.wq.weight == layer.wq.weight);
  CHECK(back.dwconv.weight == layer.dwconv.weight);
  CHECK(back.norm.gamma == layer.norm.gamma);
}
