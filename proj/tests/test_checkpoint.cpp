#include <catch2/catch_amalgamated.hpp>

#include "qpctl/checkpoint.hpp"
#include "support.hpp"

#include <sstream>

using namespace qpctl;

TEST_CASE("checkpoint round trip is exact") {
  Checkpoint cp{testing::random_params(12), 5.0, {1e-3, 2e-4, 3e-9, 4e-5, 0.0012300030000000001}, 777};
  std::ostringstream out;
  write_checkpoint(out, cp);
  std::istringstream in(out.str());
  const auto back = read_checkpoint(in);
  CHECK(back.params.values() == cp.params.values());
  CHECK(back.params.seed() == 12);
  CHECK(back.gamma == 5.0);
  CHECK(back.steps == 777);
  CHECK(back.final_loss.L_all == cp.final_loss.L_all);

  std::ostringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == out.str());
}

TEST_CASE("checkpoint stores per-layer nested arrays") {
  const Checkpoint cp{init_params({}, 3), 1.0, {}, 0};
  std::ostringstream out;
  write_checkpoint(out, cp);
  const auto doc = nlohmann::json::parse(out.str());
  REQUIRE(doc["layers"].size() == 5);
  CHECK(doc["layers"][0]["weights"].size() == 20);
  CHECK(doc["layers"][0]["weights"][0].size() == 2);
  CHECK(doc["layers"][4]["bias"].size() == 3);
  CHECK(doc["layers"][1]["weights"][2][3].get<double>() == cp.params.weights(1)(2, 3));
}

TEST_CASE("checkpoint loader rejects shape mismatches") {
  const Checkpoint cp{init_params({}, 3), 1.0, {}, 0};
  std::ostringstream out;
  write_checkpoint(out, cp);
  auto doc = nlohmann::json::parse(out.str());

  auto expect_code = [](const nlohmann::json& d, ErrorCode code) {
    std::istringstream in(d.dump());
    try {
      read_checkpoint(in);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };

  auto short_row = doc;
  short_row["layers"][2]["weights"][0].erase(0);
  expect_code(short_row, ErrorCode::shape_mismatch);

  auto missing_layer = doc;
  missing_layer["layers"].erase(4);
  expect_code(missing_layer, ErrorCode::shape_mismatch);

  auto other_arch = doc;
  other_arch["architecture"]["hidden_sizes"] = {20, 20, 20};
  expect_code(other_arch, ErrorCode::shape_mismatch);

  auto wrong_format = doc;
  wrong_format["format"] = "something-else";
  expect_code(wrong_format, ErrorCode::shape_mismatch);

  NetArchitecture small;
  small.hidden_sizes = {5};
  std::istringstream in(out.str());
  CHECK_THROWS_AS(read_checkpoint(in, &small), Error);

  std::istringstream junk("{not json");
  CHECK_THROWS_AS(read_checkpoint(junk), Error);
}

TEST_CASE("loss trace csv") {
  std::ostringstream out;
  write_loss_trace(out, {{0, {1, 2, 3, 4, 10}}, {100, {0.5, 0.25, 0, 0.125, 0.875}}});
  CHECK(out.str() == "step,L_p,L_H,L_0,L_d,L_all\n0,1,2,3,4,10\n100,0.5,0.25,0,0.125,0.875\n");
}
