#include <cstring>
#include <vector>

#include "doctest.h"
#include "fpt/ops.hpp"
#include "fpt/tensor.hpp"
#include "gradcheck.hpp"

using namespace fpt;
using namespace fpt::testutil;

TEST_CASE("ledger counts payload bytes") {
  int64_t base = ledger_snapshot().first;
  {
    Tensor t = Tensor::empty({4});
    CHECK(ledger_snapshot().first == base + 16);
  }
  CHECK(ledger_snapshot().first == base);
}

TEST_CASE("ledger conservation over a balanced sequence") {
  int64_t base = ledger_snapshot().first;
  std::vector<Tensor> keep;
  for (int i = 1; i <= 10; ++i) keep.push_back(Tensor::zeros({i, 3}));
  keep.erase(keep.begin(), keep.begin() + 5);
  keep.clear();
  CHECK(ledger_snapshot().first == base);
}

TEST_CASE("ledger peak is monotone until reset") {
  MemoryLedger& led = MemoryLedger::instance();
  led.reset_peak();
  int64_t p0 = ledger_snapshot().second;
  {
    Tensor big = Tensor::empty({1024});
    CHECK(ledger_snapshot().second == p0 + 4096);
  }
  CHECK(ledger_snapshot().second == p0 + 4096);  // peak survives the free
  led.reset_peak();
  CHECK(ledger_snapshot().second == ledger_snapshot().first);
}

// every allocation of this fixed two-layer MLP, enumerated by hand (floats):
//   leaves    x 32 | w1 128 | b1 16 | w2 32 | b2 2
//   forward   h1 64 | gelu out 64 + saved tanh 64 | y 8 | loss 1        -> 201
//   backward  seed 1 -> 202 | g(y) 8 -> 210, free seed -> 209
//             g(gelu) 64 -> 273, g(w2) 32 -> 305, g(b2) 2 -> 307, free g(y) -> 299
//             g(h1) 64 -> 363, free g(gelu) -> 299
//             g(x) 32 -> 331, g(w1) 128 -> 459, g(b1) 16 -> 475, free g(h1) -> 411
//   clear     free saved tanh -> 347
// peak above the leaves = 475 floats, live after backward = 347 floats
TEST_CASE("two-layer MLP peak equals the hand-summed allocation trace") {
  Rng rng(7);
  Tensor x = rand_tensor({4, 8}, rng);
  Tensor w1 = rand_tensor({8, 16}, rng);
  Tensor b1 = rand_tensor({16}, rng);
  Tensor w2 = rand_tensor({16, 2}, rng);
  Tensor b2 = rand_tensor({2}, rng);
  for (Tensor* t : {&x, &w1, &b1, &w2, &b2}) t->set_requires_grad(true);

  MemoryLedger::instance().reset_peak();
  int64_t base = ledger_snapshot().first;
  {
    RecordGuard rec;
    Tensor h1 = linear(x, w1, b1);
    Tensor g = gelu(h1);
    Tensor y = linear(g, w2, b2);
    Tensor loss = sum_all(y);
    Graph::instance().backward(loss);
    CHECK(ledger_snapshot().second - base == 475 * 4);
    CHECK(ledger_snapshot().first - base == 347 * 4);
  }
  for (Tensor* t : {&x, &w1, &b1, &w2, &b2}) t->zero_grad();
  CHECK(ledger_snapshot().first == base);
}

TEST_CASE("backward: sum of a vector") {
  Tensor w = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  w.set_requires_grad(true);
  RecordGuard rec;
  Tensor loss = sum_all(w);
  Graph::instance().backward(loss);
  REQUIRE(w.has_grad());
  for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(1.0f));
}

TEST_CASE("backward: sum of squares") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  w.set_requires_grad(true);
  RecordGuard rec;
  Tensor loss = sum_all(mul(w, w));
  Graph::instance().backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2.0f));
  CHECK(w.grad()[1] == doctest::Approx(4.0f));
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  w.set_requires_grad(true);
  {
    RecordGuard rec;
    Tensor y = mul(w, w);
    CHECK_THROWS(Graph::instance().backward(y));
    Graph::instance().clear();
  }
  {
    NoGradGuard ng;
    Tensor loss = sum_all(w);
    CHECK_THROWS(Graph::instance().backward(loss));
  }
}

TEST_CASE("recording disabled leaves graph and grads untouched") {
  Rng rng(3);
  Tensor x = rand_tensor({4, 4}, rng);
  Tensor w = rand_tensor({4, 4}, rng);
  w.set_requires_grad(true);
  NoGradGuard ng;
  int64_t nodes = Graph::instance().size();
  for (int i = 0; i < 1000; ++i) {
    Tensor y = matmul(x, w);
    (void)y;
  }
  CHECK(Graph::instance().size() == nodes);
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("identical seed and op sequence is bitwise deterministic") {
  auto run = [] {
    Rng rng(42);
    Tensor x = rand_tensor({8, 8}, rng);
    Tensor w = rand_tensor({8, 8}, rng);
    Tensor y = matmul(gelu(x), w);
    return std::vector<float>(y.data(), y.data() + y.numel());
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
}

TEST_CASE("rng substreams are order-independent and in-range") {
  Rng root(123);
  Rng a1 = root.split("alpha");
  Rng b1 = root.split("beta");
  Rng b2 = root.split("beta");
  Rng a2 = root.split("alpha");
  CHECK(a1.next_u64() == a2.next_u64());
  CHECK(b1.next_u64() == b2.next_u64());
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    int64_t v = r.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    float t = r.trunc_normal(0.02f);
    CHECK(std::abs(t) <= 0.04f + 1e-7f);
  }
}

TEST_CASE("clone detaches data") {
  Tensor a = Tensor::from({2}, {1.0f, 2.0f});
  Tensor c = a.clone();
  c.data()[0] = 5.0f;
  CHECK(a.data()[0] == 1.0f);
  CHECK(c.dim(0) == 2);
}
