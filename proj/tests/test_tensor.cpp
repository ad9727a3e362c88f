#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vstpose/tensor.hpp"

using vstpose::Shape;
using vstpose::Tensor;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(t.dim(3), std::out_of_range);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(vstpose::shape_str(t.shape()), "[2, 3, 4]");
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3});
  for (std::size_t i = 0; i < 6; ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.at({2, 0}), std::out_of_range);
  EXPECT_THROW(t.at({0}), std::out_of_range);
}

TEST(Tensor, DataSizeMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Tensor, SliceAndStack) {
  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 2}, std::vector<double>{5, 6, 7, 8});
  const std::vector<Tensor> items{a, b};
  const auto s = vstpose::stack(items);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(s.slice0(1, 1).reshaped({2, 2}), b);
  EXPECT_THROW(s.slice0(1, 2), std::out_of_range);
  const std::vector<Tensor> bad{a, Tensor({3})};
  EXPECT_THROW(vstpose::stack(bad), std::invalid_argument);
}

TEST(Tensor, FinitenessAndDiff) {
  Tensor t({3}, std::vector<double>{1, 2, 3});
  EXPECT_TRUE(t.all_finite());
  Tensor u = t;
  u[1] = 2.5;
  EXPECT_EQ(vstpose::max_abs_diff(t, u), 0.5);
  u[2] = std::nan("");
  EXPECT_FALSE(u.all_finite());
}
