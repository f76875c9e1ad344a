// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "icn/compress.hpp"
#include "icn/error.hpp"
#include "icn/nn.hpp"

using namespace icn;
using namespace icn::compress;

namespace {

Tensor randu(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(t.numel());
  std::mt19937_64 rng(seed);
  for (float& v : t.data) {
    const double u = (rng() >> 11) * 0x1.0p-53;
    v = static_cast<float>(lo + u * (hi - lo));
  }
  return t;
}

models::ModelConfig tiny_config(int n_classes = 2) {
  models::ModelConfig cfg;
  cfg.arch = models::Arch::CNN10;
  cfg.width_mult = {1, 16};
  cfg.n_mels = 16;
  cfg.n_classes = n_classes;
  return cfg;
}

// Separable two-class toy features: class 0 low values, class 1 high values.
FeatureSet toy_set(int per_class, uint64_t seed, int64_t frames = 32, int64_t mels = 16) {
  FeatureSet s;
  std::mt19937_64 rng(seed);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      Tensor f;
      f.shape = {frames, mels};
      f.data.resize(f.numel());
      const float base = c == 0 ? -1.0f : 1.0f;
      for (float& v : f.data)
        v = base + static_cast<float>((rng() >> 11) * 0x1.0p-53 * 0.4 - 0.2);
      s.features.push_back(std::move(f));
      s.labels.push_back(c);
    }
  return s;
}

std::vector<uint8_t> snapshot(models::Model& m) {
  std::vector<uint8_t> bytes;
  for (const auto& ref : m.params()) {
    const auto* p = reinterpret_cast<const uint8_t*>(ref.value->data.data());
    bytes.insert(bytes.end(), p, p + ref.value->data.size() * sizeof(float));
  }
  return bytes;
}

}  // namespace

TEST_CASE("quantize_tensor") {
  SUBCASE("forced example") {
    Tensor t;
    t.shape = {3};
    t.data = {-1.0f, 0.5f, 1.0f};
    QuantizedTensor q = quantize_tensor(t);
    CHECK(q.scale == doctest::Approx(1.0 / 127.0));
    CHECK(q.values[0] == -127);
    CHECK(q.values[1] == 64);  // 63.5 rounds away from zero
    CHECK(q.values[2] == 127);
  }

  SUBCASE("all-zero tensor") {
    Tensor t;
    t.shape = {4};
    t.data.assign(4, 0.0f);
    QuantizedTensor q = quantize_tensor(t);
    CHECK(q.scale == 1.0f);
    for (int8_t v : q.values) CHECK(v == 0);
  }

  SUBCASE("error bound and idempotence") {
    Tensor t = randu({500}, 9, -3.0, 3.0);
    QuantizedTensor q = quantize_tensor(t);
    Tensor back = dequantize(q);
    for (size_t i = 0; i < t.data.size(); ++i) {
      CHECK(std::fabs(back.data[i] - t.data[i]) <= q.scale / 2.0f + 1e-7f);
      CHECK(q.values[i] >= -127);
      CHECK(q.values[i] <= 127);
    }
    QuantizedTensor q2 = quantize_tensor(back);
    CHECK(q2.values == q.values);  // quantize(dequantize(q)) == q
  }
}

TEST_CASE("kd_loss identities") {
  Tensor s = randu({4, 6}, 21, -2.0, 2.0);
  Tensor t = randu({4, 6}, 22, -2.0, 2.0);
  std::vector<int> labels = {0, 2, 5, 3};

  SUBCASE("lambda=0 reduces to cross entropy") {
    auto [loss, grad] = kd_loss(s, t, labels, 2.0, 0.0);
    Tensor probs = nn::softmax(s);
    auto [ce, ce_grad] = nn::cross_entropy(probs, labels);
    CHECK(loss == doctest::Approx(ce).epsilon(1e-6));
    for (size_t i = 0; i < grad.data.size(); ++i)
      CHECK(grad.data[i] == doctest::Approx(ce_grad.data[i]).epsilon(1e-5));
  }

  SUBCASE("identical logits zero the KL term") {
    auto [loss_mixed, g1] = kd_loss(s, s, labels, 2.0, 0.5);
    Tensor probs = nn::softmax(s);
    auto [ce, g2] = nn::cross_entropy(probs, labels);
    CHECK(loss_mixed == doctest::Approx(0.5 * ce).epsilon(1e-6));
  }

  SUBCASE("pure KD on identical logits is exactly zero loss") {
    auto [loss, grad] = kd_loss(s, s, labels, 3.0, 1.0);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("huge temperature flattens the KL term") {
    auto [loss, grad] = kd_loss(s, t, labels, 1e6, 1.0);
    // KL(T) itself vanishes; the reported loss carries the T^2 factor, so
    // compare the underlying KL by removing it
    CHECK(loss / (1e6 * 1e6) <= 1e-6);
  }

  SUBCASE("loss is non-negative") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Tensor a = randu({3, 4}, 100 + seed, -3.0, 3.0);
      Tensor b = randu({3, 4}, 200 + seed, -3.0, 3.0);
      auto [loss, grad] = kd_loss(a, b, {0, 1, 2}, 2.0, 0.5);
      CHECK(loss >= 0.0);
    }
  }

  SUBCASE("shape mismatch rejected") {
    Tensor bad = randu({4, 5}, 23);
    CHECK_THROWS_AS(kd_loss(s, bad, labels, 2.0, 0.5), ShapeMismatch);
  }

  SUBCASE("gradient matches finite differences at T=2, lambda=0.5") {
    auto [loss, grad] = kd_loss(s, t, labels, 2.0, 0.5);
    auto f = [&](const Tensor& sv) {
      auto [l, g] = kd_loss(sv, t, labels, 2.0, 0.5);
      return l;
    };
    CHECK(nn::grad_check(f, s, grad, 1e-3).pass);
  }
}

TEST_CASE("distill") {
  models::Model teacher = models::build_model(tiny_config(), 31);
  FeatureSet train = toy_set(8, 41);
  FeatureSet eval_set = toy_set(4, 42);

  SUBCASE("zero epochs leave the student untouched") {
    models::Model student = models::build_model(tiny_config(), 32);
    auto before = snapshot(student);
    DistillConfig cfg;
    auto hist = distill(teacher, student, train, &eval_set, 0, cfg);
    CHECK(hist.empty());
    CHECK(snapshot(student) == before);
  }

  SUBCASE("teacher stays bitwise frozen and loss decreases on the toy set") {
    // train the teacher briefly first so its soft labels carry signal
    models::Model t2 = models::build_model(tiny_config(), 33);
    models::Model student = models::build_model(tiny_config(), 34);
    auto teacher_before = snapshot(t2);
    DistillConfig cfg;
    cfg.temperature = 1.0;
    cfg.lambda = 1.0;
    cfg.adam.lr = 1e-3;
    cfg.batch_size = 8;
    auto hist = distill(t2, student, train, &eval_set, 5, cfg);
    REQUIRE(hist.size() == 5);
    CHECK(snapshot(t2) == teacher_before);
    CHECK(hist.back().train_loss < hist.front().train_loss);
  }

  SUBCASE("empty dataset rejected") {
    models::Model student = models::build_model(tiny_config(), 35);
    FeatureSet empty;
    CHECK_THROWS_AS(distill(teacher, student, empty, nullptr, 1, DistillConfig{}),
                    EmptyDataset);
  }
}

TEST_CASE("quantize_model and quantized forward") {
  models::Model m = models::build_model(tiny_config(), 51);
  models::Model q = quantize_model(m);
  CHECK(q.quantized);
  CHECK_FALSE(m.quantized);

  // quantized container is substantially smaller
  auto fs = models::model_size(m);
  auto qs = models::model_size(q);
  CHECK(qs.serialized_bytes < fs.serialized_bytes);

  // zero input: both paths produce normalized rows and agree closely
  Tensor zero;
  zero.shape = {1, 1, 32, 16};
  zero.data.assign(zero.numel(), 0.0f);
  Tensor pf = m.forward_probs(zero, false);
  Tensor pq = q.forward_probs(zero, false);
  double s = 0.0;
  for (float v : pq.data) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-4));
  for (size_t i = 0; i < pf.data.size(); ++i)
    CHECK(std::fabs(pf.data[i] - pq.data[i]) < 1e-4f);

  // exactly-representable weights: quantization becomes lossless on a linear op
  Tensor w;
  w.shape = {2, 4};
  w.data = {1.0f, 0.0f, -1.0f, 1.0f, -1.0f, 0.0f, 1.0f, -1.0f};
  QuantizedTensor qw = quantize_tensor(w);
  Tensor back = dequantize(qw);
  for (size_t i = 0; i < w.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(w.data[i]).epsilon(1e-6));

  // quantized model round-trips through the container
  namespace fsys = std::filesystem;
  const fsys::path dir = fsys::temp_directory_path() / "icn_test_compress";
  fsys::create_directories(dir);
  const std::string p1 = (dir / "q1.icnm").string();
  const std::string p2 = (dir / "q2.icnm").string();
  models::save_model(q, p1);
  models::Model qb = models::load_model(p1);
  CHECK(qb.quantized);
  models::save_model(qb, p2);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);

  Tensor batch = randu({1, 1, 32, 16}, 55);
  Tensor o1 = q.forward_probs(batch, false);
  Tensor o2 = qb.forward_probs(batch, false);
  CHECK(o1.data == o2.data);
}

TEST_CASE("quantized model agrees with its float source after training") {
  FeatureSet train = toy_set(16, 61);
  FeatureSet eval_set = toy_set(8, 62);
  models::Model m = models::build_model(tiny_config(), 63);

  // few steps of plain CE training via distill with lambda=0 (ground truth only)
  DistillConfig cfg;
  cfg.lambda = 0.0;
  cfg.batch_size = 8;
  models::Model dummy_teacher = models::build_model(tiny_config(), 64);
  distill(dummy_teacher, m, train, nullptr, 3, cfg);

  models::Model q = quantize_model(m);
  auto pf = predict(m, eval_set);
  auto pq = predict(q, eval_set);
  size_t agree = 0;
  for (size_t i = 0; i < pf.size(); ++i)
    if (pf[i] == pq[i]) ++agree;
  CHECK(static_cast<double>(agree) / pf.size() >= 0.98);
}

TEST_CASE("compression report") {
  FeatureSet eval_set = toy_set(4, 71);
  models::Model a = models::build_model(tiny_config(), 72);
  models::Model q = quantize_model(a);

  SUBCASE("identical model twice gives ratio 1") {
    auto rows = compression_report({{"ref", &a}, {"same", &a}}, eval_set);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ratio == doctest::Approx(1.0));
    CHECK(rows[1].ratio == doctest::Approx(1.0));
    CHECK(rows[0].bytes == rows[1].bytes);
  }

  SUBCASE("quantized ratio is well below 1") {
    auto rows = compression_report({{"float", &a}, {"int8", &q}}, eval_set);
    CHECK(rows[1].ratio < 1.0);
    CHECK(rows[1].bytes < rows[0].bytes);
  }

  SUBCASE("CSV format") {
    namespace fsys = std::filesystem;
    const fsys::path dir = fsys::temp_directory_path() / "icn_test_compress";
    fsys::create_directories(dir);
    const std::string path = (dir / "report.csv").string();
    auto rows = compression_report({{"float", &a}, {"int8", &q}}, eval_set);
    write_report_csv(path, rows);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "name,accuracy,bytes,ratio");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    CHECK(n == 2);
  }

  SUBCASE("empty list rejected") {
    CHECK_THROWS_AS(compression_report({}, eval_set), EmptyList);
  }
}
