#include <limits>
#include <random>

#include "doctest.h"
#include "ftso/error.hpp"
#include "ftso/tensor.hpp"

using namespace ftso;

TEST_CASE("tensor shape and fill") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.sum() == doctest::Approx(9.0));
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1.0, 2.0}));
}

TEST_CASE("tensor arithmetic") {
  Tensor a = Tensor::from({1, 2, 3});
  Tensor b = Tensor::from({4, 5, 6});
  a += b;
  CHECK(a == Tensor::from({5, 7, 9}));
  a *= 2.0;
  CHECK(a.max_abs() == 18.0);
  CHECK(Tensor::scalar(4).item() == 4.0);
  CHECK_THROWS(a.item());
  CHECK(a.reshaped({3, 1}).shape() == Shape{3, 1});
  CHECK_THROWS(a.reshaped({2, 2}));
}

TEST_CASE("tensor random draws are seeded") {
  std::mt19937_64 r1(7), r2(7);
  CHECK(Tensor::randn({4, 4}, r1) == Tensor::randn({4, 4}, r2));
  std::mt19937_64 r3(1);
  Tensor u = Tensor::uniform({100}, r3, -1.0, 2.0);
  for (double v : u.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 2.0);
  }
  Tensor bad({2});
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
}
