#include "testing.hpp"

#include <cmath>

#include "nodseg/error.hpp"
#include "nodseg/objectives.hpp"

using namespace nodseg;

TEST_SUITE("objectives") {
  TEST_CASE("dice loss by hand") {
    const auto x = torch::tensor({0.9, 0.1, 0.8, 0.0}, torch::kDouble).view({1, 1, 2, 2});
    const auto g = torch::tensor({1.0, 0.0, 1.0, 1.0}, torch::kDouble).view({1, 1, 2, 2});
    const double inter = 0.9 + 0.8, sx = 1.8, sg = 3.0;
    const double expect = 1.0 - (2 * inter + kDiceSmoothing) / (sx + sg + kDiceSmoothing);
    CHECK(dice_loss(x, g).item<double>() == doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("dice loss averages per-item values") {
    const auto x = torch::stack({torch::full({1, 4, 4}, 0.5, torch::kDouble), torch::zeros({1, 4, 4}, torch::kDouble)});
    const auto g = torch::stack({torch::ones({1, 4, 4}, torch::kDouble), torch::zeros({1, 4, 4}, torch::kDouble)});
    const double first = 1.0 - (2 * 8.0 + kDiceSmoothing) / (8.0 + 16.0 + kDiceSmoothing);
    // Both empty: smoothing makes the ratio exactly 1.
    CHECK(dice_loss(x, g).item<double>() == doctest::Approx(first / 2).epsilon(1e-14));
  }

  TEST_CASE("BCE clamps saturated probabilities") {
    const auto p = torch::tensor({0.0, 1.0, 0.25}, torch::kDouble);
    const auto t = torch::tensor({1.0, 1.0, 0.0}, torch::kDouble);
    const double expect = (-std::log(kProbabilityClamp) - std::log(1 - kProbabilityClamp) - std::log(0.75)) / 3;
    CHECK(bce_loss(p, t).item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("weighted total and shape checks") {
    torch::manual_seed(1);
    const auto x = torch::rand({2, 1, 8, 8}, torch::kDouble);
    const auto g = (torch::rand({2, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
    const auto c = torch::rand({2}, torch::kDouble);
    const auto y = torch::tensor({1.0, 0.0}, torch::kDouble);
    const auto l = total_loss(x, g, c, y, {0.5, 2.0});
    const double expect = l.dice.item<double>() + 0.5 * l.bce_seg.item<double>() + 2.0 * l.bce_cls.item<double>();
    CHECK(l.total.item<double>() == doctest::Approx(expect).epsilon(1e-14));
    CHECK_THROWS_AS(dice_loss(x, g.view({2, 1, 64})), ParameterError);
    CHECK_THROWS_AS(total_loss(x, g, c, torch::ones({3}, torch::kDouble)), ParameterError);
  }

  TEST_CASE("gradients flow to predictions and classifier output") {
    auto x = torch::full({1, 1, 4, 4}, 0.3, torch::kDouble).requires_grad_(true);
    auto c = torch::tensor({0.4}, torch::kDouble).requires_grad_(true);
    const auto g = torch::ones({1, 1, 4, 4}, torch::kDouble);
    total_loss(x, g, c, torch::ones({1}, torch::kDouble)).total.backward();
    CHECK((x.grad() < 0).all().item<bool>());
    CHECK(c.grad().item<double>() == doctest::Approx(-1.0 / 0.4));
  }
}
