#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "clsum/train.hpp"

using namespace clsum;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig tiny_config(std::size_t vocab = 12) {
  ModelConfig cfg;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.dropout_p = 0.0;
  cfg.src_vocab = vocab;
  cfg.tgt_vocab = vocab;
  cfg.max_positions = 32;
  return cfg;
}

std::vector<Example> toy_dataset() {
  // four id patterns the model can memorize
  std::vector<Example> data;
  data.push_back({"e1", {4, 5, kEosId}, {kBosId, 6, 7, kEosId}});
  data.push_back({"e2", {5, 4, kEosId}, {kBosId, 7, 6, kEosId}});
  data.push_back({"e3", {8, 9, kEosId}, {kBosId, 10, kEosId}});
  data.push_back({"e4", {9, 8, kEosId}, {kBosId, 11, kEosId}});
  return data;
}

std::string tmp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("learning-rate schedule warms up then decays", "[train]") {
  CHECK_THROWS_AS(lr_schedule(64, 0, 4000), std::invalid_argument);
  double peak = lr_schedule(64, 4000, 4000);
  CHECK(lr_schedule(64, 1, 4000) < lr_schedule(64, 100, 4000));
  CHECK(lr_schedule(64, 100, 4000) < peak);
  CHECK(lr_schedule(64, 8000, 4000) < peak);
  // step 1 sits on the linear ramp
  CHECK_THAT(lr_schedule(64, 1, 4000),
             WithinAbs(std::pow(64.0, -0.5) * std::pow(4000.0, -1.5), 1e-18));
  // inverse-sqrt tail: quadrupling the step halves the rate
  CHECK_THAT(lr_schedule(64, 16000, 4000) / peak, WithinAbs(0.5, 1e-12));
}

TEST_CASE("first optimizer step moves by almost exactly the learning rate", "[train]") {
  Tensor w = param({1, 1}, {1.0});
  backward(sum_all(mul(w, w)));  // gradient 2w = 2
  AdamState state;
  AdamConfig cfg;
  adam_step({{"w", w}}, state, cfg, 0.1);
  // mhat = g, sqrt(vhat) = |g|, so the step is lr * g / (|g| + eps)
  CHECK_THAT(w->data[0], WithinAbs(0.9, 1e-9));
  CHECK(state.slots.at("w").t == 1);
}

TEST_CASE("optimizer slots advance independently per parameter", "[train]") {
  Tensor a = param({1, 1}, {1.0});
  Tensor b = param({1, 1}, {1.0});
  AdamState state;
  AdamConfig cfg;

  backward(sum_all(mul(a, a)));
  adam_step({{"a", a}}, state, cfg, 0.01);
  zero_grad(a);

  backward(sum_all(add(mul(a, a), mul(b, b))));
  adam_step({{"a", a}, {"b", b}}, state, cfg, 0.01);

  CHECK(state.slots.at("a").t == 2);
  CHECK(state.slots.at("b").t == 1);  // bias correction starts fresh for b
}

TEST_CASE("optimizer rejects non-finite gradients", "[train]") {
  Tensor w = param({1, 1}, {1.0});
  w->ensure_grad();
  w->grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState state;
  AdamConfig cfg;
  CHECK_THROWS_WITH(adam_step({{"w", w}}, state, cfg, 0.1),
                    Catch::Matchers::ContainsSubstring("non-finite gradient"));
}

TEST_CASE("batching packs under the twin token constraint", "[train]") {
  std::vector<std::pair<std::size_t, std::size_t>> sizes(4, {10, 10});
  auto batches = make_batches(sizes, 20, 0);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 2);

  // the target side can be the binding constraint
  std::vector<std::pair<std::size_t, std::size_t>> lopsided{{5, 30}, {5, 30}};
  auto tight = make_batches(lopsided, 30, 0);
  REQUIRE(tight.size() == 2);

  // every example appears exactly once
  std::vector<std::pair<std::size_t, std::size_t>> mixed{{3, 4}, {9, 2}, {2, 9}, {5, 5}, {1, 1}};
  auto all = make_batches(mixed, 10, 7);
  std::vector<int> seen(mixed.size(), 0);
  for (const auto& b : all)
    for (std::size_t idx : b) seen[idx]++;
  for (int c : seen) CHECK(c == 1);

  CHECK(make_batches(sizes, 20, 1) == make_batches(sizes, 20, 1));
  CHECK_THROWS_AS(make_batches({{25, 3}}, 20, 0), std::invalid_argument);
}

TEST_CASE("batch stream reshuffles every epoch, reproducibly", "[train]") {
  std::vector<std::pair<std::size_t, std::size_t>> sizes(6, {2, 2});
  detail::BatchStream s1(sizes, 100, 3);
  detail::BatchStream s2(sizes, 100, 3);
  std::vector<std::size_t> first = s1.next();
  std::vector<std::size_t> second = s1.next();
  CHECK(first != second);  // one batch per epoch here, fresh order next epoch
  CHECK(s2.next() == first);
  CHECK(s2.next() == second);
}

TEST_CASE("sequence loss needs a real continuation", "[train]") {
  ModelConfig cfg = tiny_config();
  TransformerParams model = init_params(cfg, 0);
  CHECK_THROWS_AS(
      cls_loss(cfg, model.encoder, model.decoder, {4, kEosId}, {kEosId}),
      std::invalid_argument);
  Tensor loss =
      cls_loss(cfg, model.encoder, model.decoder, {4, kEosId}, {kBosId, 5, kEosId});
  CHECK(std::isfinite(scalar_value(loss)));
  CHECK(scalar_value(loss) > 0.0);

  Tensor smoothed = cls_loss(cfg, model.encoder, model.decoder, {4, kEosId},
                             {kBosId, 5, kEosId}, {}, 0.1);
  CHECK(scalar_value(smoothed) != scalar_value(loss));
}

TEST_CASE("joint objective is the exact sum of its task terms", "[train]") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model = init_multitask(cfg, 14, 1);
  std::vector<int> src{4, 5, 6, kEosId};
  std::vector<int> tgt_cls{kBosId, 7, 8, kEosId};
  std::vector<int> tgt_aux{kBosId, 9, kEosId};

  double joint = scalar_value(joint_loss(cfg, model.encoder, model.dec_cls, model.dec_aux, src,
                                         tgt_cls, tgt_aux));
  double cls = scalar_value(cls_loss(cfg, model.encoder, model.dec_cls, src, tgt_cls));
  double aux = scalar_value(cls_loss(cfg, model.encoder, model.dec_aux, src, tgt_aux));
  CHECK_THAT(joint, WithinAbs(cls + aux, 1e-12));
}

TEST_CASE("corpus-level loss weights examples by their token count", "[train]") {
  ModelConfig cfg = tiny_config();
  TransformerParams model = init_params(cfg, 2);
  std::vector<Example> data = toy_dataset();
  double expected_num = 0.0;
  std::size_t expected_den = 0;
  for (const auto& ex : data) {
    double l = scalar_value(cls_loss(cfg, model.encoder, model.decoder, ex.src, ex.tgt));
    expected_num += l * static_cast<double>(ex.tgt.size() - 1);
    expected_den += ex.tgt.size() - 1;
  }
  CHECK_THAT(eval_loss(cfg, model.encoder, model.decoder, data),
             WithinAbs(expected_num / static_cast<double>(expected_den), 1e-12));
}

TEST_CASE("a few hundred steps memorize a toy dataset", "[train]") {
  ModelConfig cfg = tiny_config();
  TransformerParams model = init_params(cfg, 0);
  std::vector<Example> data = toy_dataset();

  TrainPlan plan;
  plan.max_steps = 250;
  plan.token_budget = 32;
  plan.warmup = 30;
  plan.lr_scale = 1.0;
  plan.seed = 0;
  plan.metrics_path = tmp_file("clsum_test_metrics.jsonl");
  std::filesystem::remove(plan.metrics_path);

  double before = eval_loss(cfg, model.encoder, model.decoder, data);
  TrainResult r = train_single(model, data, plan);
  double after = eval_loss(cfg, model.encoder, model.decoder, data);

  CHECK(r.steps_run == plan.max_steps);
  CHECK(after < before * 0.5);
  REQUIRE(r.log.size() == r.steps_run);
  CHECK(r.log.front().task == "cls");
  CHECK(r.log.front().lr > 0.0);
  CHECK(r.log.front().tokens > 0);

  std::ifstream metrics(plan.metrics_path);
  std::size_t lines = 0;
  std::string line;
  while (std::getline(metrics, line))
    if (!line.empty()) ++lines;
  CHECK(lines == r.steps_run);
}

TEST_CASE("early stop fires as soon as the batch loss crosses the bar", "[train]") {
  ModelConfig cfg = tiny_config();
  TransformerParams model = init_params(cfg, 0);
  TrainPlan plan;
  plan.max_steps = 50;
  plan.token_budget = 32;
  plan.stop_loss = 100.0;  // any first batch beats this
  TrainResult r = train_single(model, toy_dataset(), plan);
  CHECK(r.steps_run == 1);
}

TEST_CASE("checkpoints and best-validation snapshots are written", "[train]") {
  ModelConfig cfg = tiny_config();
  TransformerParams model = init_params(cfg, 1);
  std::vector<Example> data = toy_dataset();

  TrainPlan plan;
  plan.max_steps = 12;
  plan.token_budget = 32;
  plan.warmup = 10;
  plan.checkpoint_every = 5;
  plan.checkpoint_path = tmp_file("clsum_test_train_ckpt.bin");
  plan.config_path = tmp_file("clsum_test_train_ckpt.json");
  std::filesystem::remove(plan.checkpoint_path);

  train_single(model, data, plan, &data);
  REQUIRE(std::filesystem::exists(plan.checkpoint_path));
  TransformerParams restored = load_model(plan.checkpoint_path, plan.config_path);
  CHECK(restored.config.d_model == cfg.d_model);
  // the snapshot must be usable for inference
  Tensor z = encoder_forward(restored.config, restored.encoder, {4, 5, kEosId});
  CHECK(z->shape[0] == 3);
}

TEST_CASE("alternating mode switches tasks every k steps", "[train]") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model = init_multitask(cfg, 12, 3);
  std::vector<Example> cls_data = toy_dataset();
  std::vector<Example> mt_data = toy_dataset();

  TrainPlan plan;
  plan.mode = TrainMode::AlternatingMT;
  plan.alternate_k = 2;
  plan.max_steps = 8;
  plan.token_budget = 32;

  TrainResult r = train_alternating(model, cls_data, mt_data, plan);
  REQUIRE(r.log.size() == 8);
  std::vector<std::string> expected{"cls", "cls", "mt", "mt", "cls", "cls", "mt", "mt"};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(r.log[i].task == expected[i]);

  plan.alternate_k = 3;
  plan.max_steps = 7;
  MultiTaskModel model2 = init_multitask(cfg, 12, 3);
  TrainResult r2 = train_alternating(model2, cls_data, mt_data, plan);
  std::vector<std::string> expected2{"cls", "cls", "cls", "mt", "mt", "mt", "cls"};
  for (std::size_t i = 0; i < expected2.size(); ++i) CHECK(r2.log[i].task == expected2[i]);
}

TEST_CASE("joint mode trains both decoders against one encoder", "[train]") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model = init_multitask(cfg, 14, 5);
  std::vector<JointExample> data;
  data.push_back({"j1", {4, 5, kEosId}, {kBosId, 6, kEosId}, {kBosId, 8, 9, kEosId}});
  data.push_back({"j2", {5, 4, kEosId}, {kBosId, 7, kEosId}, {kBosId, 9, 8, kEosId}});

  TrainPlan plan;
  plan.mode = TrainMode::JointMS;
  plan.max_steps = 40;
  plan.token_budget = 32;
  plan.warmup = 10;

  double first = -1.0;
  TrainResult r = train_joint(model, data, plan);
  first = r.log.front().loss;
  CHECK(r.log.front().task == "joint");
  CHECK(r.final_loss < first);
}

TEST_CASE("text examples carry bos and eos in the right places", "[train]") {
  Vocabulary v = build_vocab(std::vector<std::string>{"a", "b", "c"}, 10);
  std::vector<ClsPair> pairs(1);
  pairs[0].id = "p";
  pairs[0].doc = "a b";
  pairs[0].summary_tgt = "c";
  pairs[0].summary_src_retained = "a";
  TokenizeSettings s;
  auto ex = prepare_examples(pairs, v, v, s, s);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].src == std::vector<int>{4, 5, kEosId});
  CHECK(ex[0].tgt == std::vector<int>{kBosId, 6, kEosId});

  auto joint = prepare_joint_examples(pairs, v, v, v, s, s, s);
  CHECK(joint[0].tgt_aux == std::vector<int>{kBosId, 4, kEosId});
}
