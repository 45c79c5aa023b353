#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "lgnn/optim.hpp"

using lgnn::Tensor;

TEST_CASE("plain sgd step") {
  Tensor w({1}, {1.f});
  Tensor g({1}, {1.f});
  lgnn::SgdState st;
  st.lr = 0.1f;
  lgnn::sgd_step(st, {{"w", &w, &g}});
  CHECK(w[0] == doctest::Approx(0.9f));
}

TEST_CASE("zero gradient at rest leaves parameters unchanged") {
  Tensor w({3}, {1.f, -2.f, 0.5f});
  Tensor g({3}, 0.f);
  lgnn::SgdState st;
  st.lr = 0.1f;
  st.momentum = 0.9f;
  auto before = w.data;
  lgnn::sgd_step(st, {{"w", &w, &g}});
  CHECK(w.data == before);
}

TEST_CASE("momentum two-step recurrence") {
  Tensor w({1}, {0.f});
  Tensor g({1}, {1.f});
  lgnn::SgdState st;
  st.lr = 0.1f;
  st.momentum = 0.9f;
  lgnn::sgd_step(st, {{"w", &w, &g}});
  CHECK(w[0] == doctest::Approx(-0.1f));
  lgnn::sgd_step(st, {{"w", &w, &g}});
  // v2 = 0.9*1 + 1 = 1.9; w = -0.1 - 0.19
  CHECK(w[0] == doctest::Approx(-0.29f));
}

TEST_CASE("weight decay enters before momentum") {
  Tensor w({1}, {2.f});
  Tensor g({1}, {0.f});
  lgnn::SgdState st;
  st.lr = 0.1f;
  st.momentum = 0.5f;
  st.weight_decay = 0.1f;
  lgnn::sgd_step(st, {{"w", &w, &g}});
  // g' = 0 + 0.1*2 = 0.2; v = 0.2; w = 2 - 0.02
  CHECK(w[0] == doctest::Approx(1.98f));
  lgnn::sgd_step(st, {{"w", &w, &g}});
  // g' = 0.1*1.98 = 0.198; v = 0.5*0.2 + 0.198 = 0.298; w = 1.98 - 0.0298
  CHECK(w[0] == doctest::Approx(1.9502f));
}

TEST_CASE("step rejects mismatched registries") {
  Tensor w({2}, {1.f, 2.f});
  Tensor g({3}, 0.f);
  lgnn::SgdState st;
  CHECK_THROWS_AS(lgnn::sgd_step(st, {{"w", &w, &g}}), lgnn::RegistryError);

  // velocity remembered under a name must keep its shape
  Tensor g2({2}, 0.f);
  lgnn::sgd_step(st, {{"w", &w, &g2}});
  Tensor w3({3}, 0.f);
  Tensor g3({3}, 0.f);
  CHECK_THROWS_AS(lgnn::sgd_step(st, {{"w", &w3, &g3}}), lgnn::RegistryError);
}

TEST_CASE("step is order independent") {
  Tensor a1({2}, {1.f, 2.f}), b1({2}, {3.f, 4.f});
  Tensor a2 = a1, b2 = b1;
  Tensor ga({2}, {0.1f, 0.2f}), gb({2}, {-0.3f, 0.4f});
  lgnn::SgdState s1, s2;
  s1.lr = s2.lr = 0.05f;
  s1.momentum = s2.momentum = 0.9f;
  s1.weight_decay = s2.weight_decay = 0.01f;
  for (int it = 0; it < 3; ++it) {
    lgnn::sgd_step(s1, {{"a", &a1, &ga}, {"b", &b1, &gb}});
    lgnn::sgd_step(s2, {{"b", &b2, &gb}, {"a", &a2, &ga}});
  }
  CHECK(a1.data == a2.data);
  CHECK(b1.data == b2.data);
}

TEST_CASE("lr schedule step decay") {
  auto sched = lgnn::make_lr_schedule(0.1, {40, 70, 90}, 0.2);
  CHECK(lgnn::lr_at_epoch(sched, 0) == doctest::Approx(0.1));
  CHECK(lgnn::lr_at_epoch(sched, 39) == doctest::Approx(0.1));
  CHECK(lgnn::lr_at_epoch(sched, 40) == doctest::Approx(0.02));
  CHECK(lgnn::lr_at_epoch(sched, 45) == doctest::Approx(0.02));
  CHECK(lgnn::lr_at_epoch(sched, 95) == doctest::Approx(8e-4));

  // non-increasing over the whole range
  double prev = lgnn::lr_at_epoch(sched, 0);
  for (int e = 1; e < 120; ++e) {
    const double cur = lgnn::lr_at_epoch(sched, e);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("lr schedule validation") {
  CHECK_THROWS_AS(lgnn::make_lr_schedule(0.0, {10}, 0.2), lgnn::ConfigError);
  CHECK_THROWS_AS(lgnn::make_lr_schedule(0.1, {10, 10}, 0.2), lgnn::ConfigError);
  CHECK_THROWS_AS(lgnn::make_lr_schedule(0.1, {10, 5}, 0.2), lgnn::ConfigError);
  CHECK_THROWS_AS(lgnn::make_lr_schedule(0.1, {10}, 1.0), lgnn::ConfigError);
  auto sched = lgnn::make_lr_schedule(0.1, {}, 0.5);
  CHECK(lgnn::lr_at_epoch(sched, 1000) == doctest::Approx(0.1));
  CHECK_THROWS_AS(lgnn::lr_at_epoch(sched, -1), lgnn::ConfigError);
}
