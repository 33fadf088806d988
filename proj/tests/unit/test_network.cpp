#include "testing.hpp"

#include <set>

#include "../fixtures.hpp"
#include "nodseg/error.hpp"
#include "nodseg/network.hpp"
#include "nodseg/trainer.hpp"

using namespace nodseg;

TEST_SUITE("network") {
  TEST_CASE("depthwise-separable conv has per-channel spatial and 1x1 mixing weights") {
    DepthwiseSeparableConv conv(6, 10);
    CHECK(conv->depthwise->weight.sizes().vec() == std::vector<std::int64_t>{6, 1, 3, 3});
    CHECK(conv->pointwise->weight.sizes().vec() == std::vector<std::int64_t>{10, 6, 1, 1});
    CHECK(parameter_count(*conv) == 6 * 9 + 10 * 6 + 10);
    CHECK(conv->forward(torch::rand({2, 6, 8, 8})).sizes().vec() == std::vector<std::int64_t>{2, 10, 8, 8});
    CHECK_THROWS_AS(conv->forward(torch::rand({2, 5, 8, 8})), ConfigError);
  }

  TEST_CASE("ASPP keeps resolution at every rate") {
    Aspp aspp(4, 6, std::vector<int>{1, 5, 10, 15});
    CHECK(aspp->branches.size() == 4);
    CHECK(aspp->forward(torch::rand({1, 4, 16, 16})).sizes().vec() == std::vector<std::int64_t>{1, 6, 16, 16});
  }

  TEST_CASE("fresh combination block passes segmentation features through") {
    FeatureCombine fc(12, 8);
    const auto f_cls = torch::rand({2, 12, 16, 16});
    const auto f_seg = torch::rand({2, 8, 16, 16});
    CHECK(torch::equal(fc->forward(f_cls, f_seg), f_seg));
    CHECK_THROWS_AS(fc->forward(torch::rand({2, 12, 8, 8}), f_seg), ConfigError);
  }

  TEST_CASE("combining changes nothing at initialization") {
    torch::NoGradGuard guard;
    auto cfg = fixture::small_model();
    auto with = make_model(cfg, 3);
    cfg.combination_enabled = false;
    auto without = make_model(cfg, 3);
    // Copy shared tensors so both nets carry identical weights.
    auto src = with->named_parameters(true);
    for (auto& p : without->named_parameters(true)) p.value().copy_(src[p.key()]);
    auto src_buf = with->named_buffers(true);
    for (auto& b : without->named_buffers(true)) b.value().copy_(src_buf[b.key()]);
    const auto image = torch::rand({2, 1, 64, 64});
    const auto a = model_forward(with, image, Mode::Eval, true);
    const auto b = model_forward(without, image, Mode::Eval, true);
    CHECK(torch::equal(a.u, b.u));
    CHECK(torch::equal(a.x, b.x));
  }

  TEST_CASE("parameter groups cover every tensor") {
    auto model = make_model(fixture::small_model(), 1);
    const auto& groups = model->group_names();
    const std::set<std::string> names(groups.begin(), groups.end());
    for (const char* g : {"S1", "S5", "S9", "C1", "C5", "FC", "FCB1", "FCB3", "STD"}) CHECK(names.count(g) == 1);
    CHECK(names.count("FCB4") == 0);
    for (const auto& p : model->named_parameters(true)) CHECK(names.count(group_of(p.key())) == 1);
    for (const auto& b : model->named_buffers(true)) CHECK(names.count(group_of(b.key())) == 1);
  }

  TEST_CASE("classifier stages have the documented strides and widths") {
    auto model = make_model(fixture::small_model(), 1);
    torch::NoGradGuard guard;
    model->eval();
    const auto out = model->classify(torch::rand({1, 1, 64, 64}));
    const auto ch = model->cls_channels();
    for (int s = 0; s < 5; ++s) {
      CHECK(out.stages[s].size(1) == ch[s]);
      CHECK(out.stages[s].size(2) == 64 >> (s + 1));
    }
    CHECK(out.c.sizes().vec() == std::vector<std::int64_t>{1});
  }

  TEST_CASE("invalid configurations and inputs are rejected") {
    auto cfg = fixture::small_model();
    cfg.combinations = {{2, 4}};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.combinations = {{3, 4}, {3, 4}};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = fixture::small_model();
    cfg.aspp_rates.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    auto model = make_model(fixture::small_model(), 1);
    CHECK_THROWS_AS(model->forward(torch::rand({1, 1, 48, 64}), false), ConfigError);
    CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 64, 64}), false), ConfigError);
  }

  TEST_CASE("STD switch only changes the activation") {
    auto model = make_model(fixture::small_model(), 2);
    torch::NoGradGuard guard;
    const auto image = torch::rand({1, 1, 64, 64});
    const auto off = model_forward(model, image, Mode::Eval, false);
    const auto on = model_forward(model, image, Mode::Eval, true);
    CHECK(torch::equal(off.u, on.u));
    CHECK(torch::allclose(off.x, torch::sigmoid(off.u)));
    CHECK(!torch::allclose(on.x, off.x));
  }
}
