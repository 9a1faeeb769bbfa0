// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "conlm/connectome.hpp"
#include "conlm/rng.hpp"
#include "oracle.hpp"

using namespace conlm;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.vocab_size = 21;
  cfg.max_seq_len = 32;
  return cfg;
}

// One-layer config whose emb tensor we can hand-pick (d must stay even).
ModelConfig row_cfg(Index vocab, Index d) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = d;
  cfg.n_heads = 1;
  cfg.vocab_size = vocab;
  return cfg;
}

// A free-standing single-tensor connectome for stats fixtures.
Connectome hand_connectome(std::initializer_list<int> entries) {
  Connectome c;
  Connectome::Tensor t;
  t.name = "hand";
  t.mask = MaskMat::Zero(static_cast<Index>(entries.size()), 1);
  Index i = 0, alive = 0;
  for (int e : entries) {
    t.mask(i++, 0) = static_cast<std::int8_t>(e);
    if (e != 0) ++alive;
  }
  t.density = static_cast<double>(alive) / static_cast<double>(entries.size());
  c.tensors.push_back(std::move(t));
  return c;
}

}  // namespace

TEST_CASE("derive prunes the smallest magnitudes and keeps survivor signs") {
  // emb is [5,1]: exactly the hand example (0.5, -0.3, 0.1, 0.01, -0.02).
  // Other tensors get distinct nonzero values so they prune deterministically too.
  auto cfg = row_cfg(5, 2);
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 4);
  p.emb.col(0) << 0.5f, -0.3f, 0.1f, 0.01f, -0.02f;
  p.emb.col(1) << 0.5f, -0.3f, 0.1f, 0.01f, -0.02f;

  Connectome dense = dense_connectome(cfg);
  Connectome c = derive(p, dense, 0.4);
  c.validate();
  CHECK(c.generation == 1);
  // per column: 5 alive, floor(0.4*5) = 2 pruned -> (+1, -1, +1, 0, 0)
  for (Index col = 0; col < 2; ++col) {
    CHECK(c.tensors[0].mask(0, col) == 1);
    CHECK(c.tensors[0].mask(1, col) == -1);
    CHECK(c.tensors[0].mask(2, col) == 1);
    CHECK(c.tensors[0].mask(3, col) == 0);
    CHECK(c.tensors[0].mask(4, col) == 0);
  }
}

TEST_CASE("derive count arithmetic: 10 alive at 0.2 leaves exactly 8") {
  auto cfg = row_cfg(5, 2);  // emb is [5,2]: 10 entries
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 9);
  Connectome c = derive(p, dense_connectome(cfg), 0.2);
  CHECK((c.tensors[0].mask != 0).count() == 8);
}

TEST_CASE("derive breaks |w| ties toward the smaller flat index") {
  auto cfg = row_cfg(2, 2);  // emb flat (row-major): (0,0),(0,1),(1,0),(1,1)
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 2);
  p.emb(0, 0) = 0.5f;
  p.emb(0, 1) = 0.1f;
  p.emb(1, 0) = 0.1f;
  p.emb(1, 1) = 0.9f;
  Connectome c = derive(p, dense_connectome(cfg), 0.26);  // floor(0.26*4) = 1 pruned
  CHECK(c.tensors[0].mask(0, 0) == 1);
  CHECK(c.tensors[0].mask(0, 1) == 0);  // the tied entry with the smaller flat index goes first
  CHECK(c.tensors[0].mask(1, 0) == 1);
  CHECK(c.tensors[0].mask(1, 1) == 1);
}

TEST_CASE("derive never resurrects, prunes exact counts, and preserves signs") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 31);
  Connectome prev = dense_connectome(cfg);

  for (int round = 0; round < 3; ++round) {
    Connectome next = derive(p, prev, 0.2);
    next.validate();
    CHECK(next.generation == prev.generation + 1);
    for (std::size_t ti = 0; ti < next.tensors.size(); ++ti) {
      const auto& pm = prev.tensors[ti].mask;
      const auto& nm = next.tensors[ti].mask;
      const Index n_alive = (pm != 0).count();
      const Index expect = n_alive - static_cast<Index>(std::floor(0.2 * static_cast<double>(n_alive)));
      CHECK((nm != 0).count() == expect);
      auto wl = p.tensor_list();
      const auto& w = *wl[ti].second;
      for (Index r = 0; r < nm.rows(); ++r)
        for (Index c = 0; c < nm.cols(); ++c) {
          if (pm(r, c) == 0) CHECK(nm(r, c) == 0);  // no resurrection
          if (nm(r, c) != 0) {
            CHECK(pm(r, c) != 0);
            CHECK(nm(r, c) == (w(r, c) < 0.0f ? -1 : 1));  // sign preservation
          }
        }
    }
    prev = next;
  }
}

TEST_CASE("six successive derives at 0.2 land near 0.8^6 global density") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 77);
  Connectome c = dense_connectome(cfg);
  for (int g = 0; g < 6; ++g) c = derive(p, c, 0.2);
  CHECK(c.generation == 6);
  CHECK(c.global_density() > 0.255);
  CHECK(c.global_density() < 0.270);  // 0.8^6 = 0.262144 within per-tensor floor rounding
}

TEST_CASE("derive rejects bad inputs") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 8);
  Connectome dense = dense_connectome(cfg);
  CHECK_THROWS_AS(derive(p, dense, 0.0), ConfigError);
  CHECK_THROWS_AS(derive(p, dense, 1.0), ConfigError);

  ModelConfig other = cfg;
  other.d_model = 8;
  TensorSet<float> q = TensorSet<float>::normal_init(other, 8);
  CHECK_THROWS_AS(derive(q, dense, 0.2), ShapeError);
}

TEST_CASE("to_init produces exactly ternary weights that round-trip signs") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 51);
  Connectome c = derive(p, dense_connectome(cfg), 0.2);
  TensorSet<float> init = to_init<float>(c, cfg);

  auto il = init.tensor_list();
  for (std::size_t ti = 0; ti < il.size(); ++ti) {
    const auto& m = *il[ti].second;
    const auto& mask = c.tensors[ti].mask;
    for (Index r = 0; r < m.rows(); ++r)
      for (Index col = 0; col < m.cols(); ++col) {
        if (mask(r, col) == 1) CHECK(m(r, col) == 0.02f);
        if (mask(r, col) == -1) CHECK(m(r, col) == -0.02f);
        if (mask(r, col) == 0) CHECK(m(r, col) == 0.0f);
      }
  }

  // re-deriving signs from the ternary init returns the mask at nonzero positions
  Connectome again = derive(init, c, 0.2);
  for (std::size_t ti = 0; ti < again.tensors.size(); ++ti)
    for (Index r = 0; r < again.tensors[ti].mask.rows(); ++r)
      for (Index col = 0; col < again.tensors[ti].mask.cols(); ++col)
        if (again.tensors[ti].mask(r, col) != 0)
          CHECK(again.tensors[ti].mask(r, col) == c.tensors[ti].mask(r, col));

  // all-zero mask -> all-zero parameters
  Connectome zeroed = c;
  for (auto& t : zeroed.tensors) {
    t.mask.setZero();
    t.density = 0.0;
  }
  TensorSet<float> z = to_init<float>(zeroed, cfg);
  z.for_each_tensor([](const std::string&, const Mat<float>& m) {
    CHECK(m.cwiseAbs().maxCoeff() == 0.0f);
  });
}

TEST_CASE("random_like matches densities, is seed-deterministic, and signs are balanced") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 64;
  cfg.n_heads = 2;
  cfg.vocab_size = 1024;  // emb alone has 65536 entries
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 3);
  Connectome c = derive(p, dense_connectome(cfg), 0.4);

  Connectome r1 = random_like(c, 500);
  Connectome r2 = random_like(c, 500);
  Connectome r3 = random_like(c, 501);
  r1.validate();

  bool any_diff = false;
  for (std::size_t ti = 0; ti < c.tensors.size(); ++ti) {
    CHECK((r1.tensors[ti].mask != 0).count() == (c.tensors[ti].mask != 0).count());
    CHECK((r1.tensors[ti].mask == r2.tensors[ti].mask).all());
    if (!(r1.tensors[ti].mask == r3.tensors[ti].mask).all()) any_diff = true;
  }
  CHECK(any_diff);

  Index plus = 0, nonzero = 0;
  for (const auto& t : r1.tensors) {
    plus += (t.mask == 1).count();
    nonzero += (t.mask != 0).count();
  }
  REQUIRE(nonzero > 100000);
  const double frac = static_cast<double>(plus) / static_cast<double>(nonzero);
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
}

TEST_CASE("stats reproduces hand entropies and permutation invariance") {
  // 8 entries: 6 zeros, 1 minus, 1 plus -> (0.75, 0.125, 0.125)
  Connectome c = hand_connectome({-1, 0, 0, 0, 0, 1, 0, 0});
  ConnectomeStats s = stats(c);
  CHECK(s.global.p_zero == doctest::Approx(0.75));
  CHECK(s.entropy_bits_per_weight == doctest::Approx(1.061278124459133).epsilon(1e-12));
  CHECK(s.entropy_bits_per_weight ==
        doctest::Approx(oracle::ternary_entropy(0.75, 0.125, 0.125)).epsilon(1e-12));

  // permutation within the tensor leaves entropy unchanged
  Connectome perm = hand_connectome({0, 0, 1, 0, 0, 0, 0, -1});
  CHECK(stats(perm).entropy_bits_per_weight == s.entropy_bits_per_weight);

  // all-zero -> H = 0
  Connectome zero = hand_connectome({0, 0, 0, 0});
  CHECK(stats(zero).entropy_bits_per_weight == 0.0);

  // uniform thirds -> log2 3
  Connectome thirds = hand_connectome({0, -1, 1});
  CHECK(stats(thirds).entropy_bits_per_weight == doctest::Approx(1.584962500721156).epsilon(1e-12));
}

TEST_CASE("compressed size estimate is ceil(H*n/8)") {
  CHECK(compressed_size_estimate_bytes(1.0, 8) == 1);
  CHECK(compressed_size_estimate_bytes(1.0, 9) == 2);
  CHECK(compressed_size_estimate_bytes(0.0, 1000000) == 0);
}

TEST_CASE("connectome file round-trips bitwise and detects corruption") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 123);
  Connectome c = derive(p, dense_connectome(cfg), 0.3);
  c = derive(to_init<float>(c, cfg), c, 0.25);  // generation 2, mixed signs and zeros

  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "conlm_cntm_test.bin").string();
  save_connectome(c, path);
  Connectome d = load_connectome(path);
  CHECK(d.generation == c.generation);
  CHECK(d.init_scale == c.init_scale);
  REQUIRE(d.tensors.size() == c.tensors.size());
  for (std::size_t ti = 0; ti < c.tensors.size(); ++ti) {
    CHECK(d.tensors[ti].name == c.tensors[ti].name);
    CHECK((d.tensors[ti].mask == c.tensors[ti].mask).all());
    CHECK(d.tensors[ti].density == c.tensors[ti].density);
  }

  // size formula: header + per-tensor records + ceil(n/4) payload bytes
  std::uint64_t expected = 4 + 2 + 2 + 4 + 4;
  for (const auto& t : c.tensors)
    expected += 4 + t.name.size() + 8 + 8 + 8 +
                static_cast<std::uint64_t>((t.mask.size() + 3) / 4);
  CHECK(fs::file_size(path) == expected);

  // Flip one payload byte that contains a 00 code: the complement carries a
  // forbidden 11 code, so the load must fail integrity checks.
  {
    const std::uint64_t payload_len = static_cast<std::uint64_t>((c.tensors.back().mask.size() + 3) / 4);
    const std::uint64_t payload_off = fs::file_size(path) - payload_len;
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    for (std::uint64_t off = payload_off; off < payload_off + payload_len; ++off) {
      f.seekg(static_cast<std::streamoff>(off));
      int b = f.get();
      bool has_zero_code = false;
      for (int k = 0; k < 4; ++k)
        if (((b >> (2 * k)) & 3) == 0) has_zero_code = true;
      if (has_zero_code) {
        f.seekp(static_cast<std::streamoff>(off));
        f.put(static_cast<char>(b ^ 0xFF));
        break;
      }
    }
  }
  CHECK_THROWS_AS(load_connectome(path), IoError);

  // truncation and bad magic
  save_connectome(c, path);
  fs::resize_file(path, fs::file_size(path) - 3);
  CHECK_THROWS_AS(load_connectome(path), IoError);
  save_connectome(c, path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(1);
    f.put('Z');
  }
  CHECK_THROWS_AS(load_connectome(path), IoError);
  fs::remove(path);
}

TEST_CASE("derive with exempt embeddings keeps emb/unemb unpruned") {
  auto cfg = small_cfg();
  TensorSet<float> p = TensorSet<float>::normal_init(cfg, 17);
  Connectome c = derive(p, dense_connectome(cfg), 0.2, /*exempt_embeddings=*/true);
  for (const auto& t : c.tensors) {
    if (t.name == "emb" || t.name == "unemb")
      CHECK(t.density == 1.0);
    else
      CHECK(t.density < 1.0);
  }
}
