#include <doctest.h>

#include "oracles.hpp"
#include "pasta/adaptation.hpp"
#include "pasta/ops.hpp"

#include <filesystem>
#include <random>

using namespace pasta;

namespace {

constexpr int kCls = 1;
constexpr int kSep = 2;

SpecialTokenSpec spec_with_slots(std::size_t p) {
  SpecialTokenSpec s;
  s.special_token_ids = {kCls, kSep};
  s.cls_token_ids = {kCls};
  s.max_slots = p;
  return s;
}

}  // namespace

TEST_CASE("locate_special_tokens assigns slots in sequence order") {
  SpecialTokenSpec spec = spec_with_slots(3);

  auto locs = locate_special_tokens({kCls, 7, 9, kSep}, spec);
  REQUIRE(locs.size() == 2);
  CHECK(locs[0].position == 0);
  CHECK(locs[0].slot == 0);
  CHECK(locs[1].position == 3);
  CHECK(locs[1].slot == 1);

  // Two SEP occurrences get distinct slots 1 and 2.
  locs = locate_special_tokens({kCls, 7, kSep, 9, kSep}, spec);
  REQUIRE(locs.size() == 3);
  CHECK(locs[1].position == 2);
  CHECK(locs[1].slot == 1);
  CHECK(locs[2].position == 4);
  CHECK(locs[2].slot == 2);

  CHECK_THROWS_WITH_AS(locate_special_tokens({kCls, kSep, kSep, kSep}, spec),
                       doctest::Contains("found 4 special tokens, max slots P = 3"),
                       std::runtime_error);

  // Sequences without any special token are legal and locate to nothing.
  CHECK(locate_special_tokens({5, 6, 7}, spec).empty());

  SpecialTokenSpec empty;
  empty.max_slots = 1;
  CHECK_THROWS_AS(locate_special_tokens({1, 2}, empty), std::invalid_argument);
}

TEST_CASE("build_masks places bank vectors only at located special rows") {
  const std::size_t l = 2, p = 2, d = 4, n = 5;
  SpecialTokenSpec spec = spec_with_slots(p);
  const std::vector<int> ids = {kCls, 7, 8, 9, kSep};
  const auto locs = locate_special_tokens(ids, spec);

  SUBCASE("no special tokens gives all-zero masks") {
    AdaptationBank bank(l, p, d, AblationMode::Full);
    auto masks = build_masks({}, spec, bank, n);
    REQUIRE(masks.size() == l);
    for (const auto& m : masks) {
      for (double v : m.data()) CHECK(v == 0.0);
    }
  }

  SUBCASE("full mode places every slot") {
    AdaptationBank bank(l, p, d, AblationMode::Full);
    for (std::size_t j = 0; j < d; ++j) {
      bank.vector_at(0, 0).at(j) = 1.0 + static_cast<double>(j);
      bank.vector_at(0, 1).at(j) = -2.0;
    }
    auto masks = build_masks(locs, spec, bank, n);
    CHECK(masks[0].at(0, 2) == 3.0);   // CLS row holds slot-0 vector
    CHECK(masks[0].at(4, 1) == -2.0);  // SEP row holds slot-1 vector
    for (std::size_t r = 1; r < 4; ++r) {
      for (std::size_t j = 0; j < d; ++j) CHECK(masks[0].at(r, j) == 0.0);
    }
    for (double v : masks[1].data()) CHECK(v == 0.0);  // layer-1 vectors untouched
  }

  SUBCASE("classifier-only mode zeroes everything") {
    AdaptationBank bank(l, p, d, AblationMode::ClassifierOnly);
    auto masks = build_masks(locs, spec, bank, n);
    for (const auto& m : masks) {
      for (double v : m.data()) CHECK(v == 0.0);
    }
    CHECK(bank.parameters().empty());
  }

  SUBCASE("no-cls and no-sep disable rows by token type") {
    AdaptationBank no_cls(l, p, d, AblationMode::NoCLS);
    AdaptationBank no_sep(l, p, d, AblationMode::NoSEP);
    for (std::size_t j = 0; j < d; ++j) {
      if (no_cls.slot_trainable(1)) no_cls.vector_at(0, 1).at(j) = 5.0;
      if (no_sep.slot_trainable(0)) no_sep.vector_at(0, 0).at(j) = 7.0;
    }
    auto mc = build_masks(locs, spec, no_cls, n);
    CHECK(mc[0].at(0, 0) == 0.0);  // CLS row disabled
    CHECK(mc[0].at(4, 0) == 5.0);  // SEP row adapted
    auto ms = build_masks(locs, spec, no_sep, n);
    CHECK(ms[0].at(0, 0) == 7.0);  // CLS row adapted
    CHECK(ms[0].at(4, 0) == 0.0);  // SEP row disabled
  }

  SUBCASE("shared mode ties all slots within a layer") {
    AdaptationBank bank(l, p, d, AblationMode::SharedVector);
    bank.shared_vector(1).at(0) = 9.0;
    auto masks = build_masks(locs, spec, bank, n);
    CHECK(masks[1].at(0, 0) == 9.0);
    CHECK(masks[1].at(4, 0) == 9.0);
    CHECK(masks[0].at(0, 0) == 0.0);
  }
}

TEST_CASE("mask gradients sum over the placements of each vector") {
  const std::size_t l = 1, p = 2, d = 3, n = 4;
  SpecialTokenSpec spec = spec_with_slots(p);
  const std::vector<int> ids = {kCls, 6, 7, kSep};
  const auto locs = locate_special_tokens(ids, spec);

  Tape tape;
  AdaptationBank shared(l, p, d, AblationMode::SharedVector);
  shared.attach(tape);
  std::mt19937_64 rng(31);
  const auto wv = oracle::random_values(rng, n * d);
  auto masks = build_masks(locs, spec, shared, n);
  backward(pasta::sum(mul(masks[0], Tensor::from_data({n, d}, wv))));

  // The shared vector sat at rows 0 and 3; its gradient is their sum.
  const auto g = shared.shared_vector(0).grad();
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(g[j] == doctest::Approx(wv[0 * d + j] + wv[3 * d + j]));
  }
}

TEST_CASE("trainable_param_count reproduces the published budget arithmetic") {
  ModelConfig c;
  c.num_layers = 24;
  c.hidden_size = 1024;
  c.num_heads = 16;
  c.ffn_size = 4096;
  c.vocab_size = 30522;

  SUBCASE("full mode, P = 3: 24 * 3 * 1024") {
    auto pc = trainable_param_count(c, spec_with_slots(3), AblationMode::Full, 0);
    CHECK(pc.adaptation == 73728);
    // Fractions of the published backbone size land inside the reported range.
    const std::size_t backbone = 335141888;
    CHECK(pc.fraction_of(backbone) * 100.0 == doctest::Approx(0.0220).epsilon(0.005));
    auto pc2 = trainable_param_count(c, spec_with_slots(2), AblationMode::Full, 0);
    CHECK(pc2.adaptation == 49152);
    CHECK(pc2.fraction_of(backbone) * 100.0 == doctest::Approx(0.0147).epsilon(0.005));
  }

  SUBCASE("shared mode is P-independent: 24 * 1024") {
    auto a = trainable_param_count(c, spec_with_slots(3), AblationMode::SharedVector, 0);
    auto b = trainable_param_count(c, spec_with_slots(7), AblationMode::SharedVector, 0);
    CHECK(a.adaptation == 24576);
    CHECK(b.adaptation == 24576);
  }

  SUBCASE("ablations carve exact slices and add head parameters") {
    auto full = trainable_param_count(c, spec_with_slots(3), AblationMode::Full, 100);
    auto no_cls = trainable_param_count(c, spec_with_slots(3), AblationMode::NoCLS, 100);
    auto no_sep = trainable_param_count(c, spec_with_slots(3), AblationMode::NoSEP, 100);
    auto none = trainable_param_count(c, spec_with_slots(3), AblationMode::ClassifierOnly, 100);
    CHECK(full.adaptation - no_cls.adaptation == 24 * 1024);  // exactly the CLS slot
    CHECK(no_sep.adaptation == 24 * 1024);
    CHECK(none.adaptation == 0);
    CHECK(none.total_trainable == 100);
    CHECK(full.total_trainable == 73728 + 100);
  }
}

TEST_CASE("bank parameter counts match the closed forms") {
  const std::size_t l = 3, p = 3, d = 8;
  ModelConfig c;
  c.num_layers = l;
  c.hidden_size = d;
  c.num_heads = 2;
  c.ffn_size = 16;
  c.vocab_size = 10;
  SpecialTokenSpec spec = spec_with_slots(p);

  for (AblationMode mode : kAllAblationModes) {
    CAPTURE(to_string(mode));
    AdaptationBank bank(l, p, d, mode);
    CHECK(bank.adaptation_param_count() ==
          trainable_param_count(c, spec, mode, 0).adaptation);
  }
  // Counts depend on neither sequence length nor vocabulary size.
  AdaptationBank full(l, p, d, AblationMode::Full);
  CHECK(full.adaptation_param_count() == l * p * d);
}

TEST_CASE("adaptation checkpoint round-trips values, mode and seed") {
  const auto path = std::filesystem::temp_directory_path() / "pasta_adp_test.pastaadp";

  AdaptationBank bank(2, 2, 3, AblationMode::Full);
  std::mt19937_64 rng(37);
  for (const Tensor& v : bank.vectors()) {
    Tensor vv = v;
    for (std::size_t j = 0; j < vv.size(); ++j) vv.at(j) = oracle::random_values(rng, 1)[0];
  }
  save_adaptation(path, bank, 4242);

  LoadedAdaptation loaded = load_adaptation(path);
  CHECK(loaded.seed == 4242);
  CHECK(loaded.bank.mode() == AblationMode::Full);
  CHECK(loaded.bank.num_layers() == 2);
  CHECK(loaded.bank.max_slots() == 2);
  CHECK(loaded.bank.hidden_size() == 3);
  for (std::size_t i = 0; i < bank.vectors().size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(loaded.bank.vectors()[i].at(j) == bank.vectors()[i].at(j));
    }
  }

  // Shared banks persist L payloads instead of L*P.
  AdaptationBank shared(4, 3, 5, AblationMode::SharedVector);
  CHECK(shared.vectors().size() == 4);
  save_adaptation(path, shared, 1);
  CHECK(load_adaptation(path).bank.vectors().size() == 4);
  std::filesystem::remove(path);
}
