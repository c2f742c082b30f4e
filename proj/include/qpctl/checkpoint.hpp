#pragma once

#include "qpctl/core.hpp"
#include "qpctl/io.hpp"
#include "qpctl/json_writer.hpp"
#include "qpctl/net.hpp"
#include "qpctl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace qpctl {

inline constexpr std::string_view kCheckpointFormat = "qpctl-net";
inline constexpr int kCheckpointVersion = 1;

/// Network parameters plus the system they were trained for.
struct Checkpoint {
  NetParams params;
  double gamma = 1.0;
  LossBreakdown final_loss;
  long steps = 0;
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& cp) {
  io::JsonWriter w(out);
  const auto& arch = cp.params.architecture();
  w.begin_object();
  w.field("format", kCheckpointFormat);
  w.field("version", kCheckpointVersion);
  w.field("gamma", cp.gamma);
  w.field("seed", cp.params.seed());
  w.field("steps", cp.steps);
  w.key("architecture").begin_object();
  w.field("input_dim", NetArchitecture::input_dim);
  w.field("output_dim", NetArchitecture::output_dim);
  w.key("hidden_sizes").begin_array();
  for (int h : arch.hidden_sizes) w.value(h);
  w.end_array();
  w.end_object();
  w.key("final_loss").begin_object();
  w.field("L_p", cp.final_loss.L_p);
  w.field("L_H", cp.final_loss.L_H);
  w.field("L_0", cp.final_loss.L_0);
  w.field("L_d", cp.final_loss.L_d);
  w.field("L_all", cp.final_loss.L_all);
  w.end_object();
  w.key("layers").begin_array();
  for (int l = 0; l < cp.params.layer_count(); ++l) {
    const auto wl = cp.params.weights(l);
    w.begin_object();
    w.key("weights").begin_array();
    for (Eigen::Index r = 0; r < wl.rows(); ++r) {
      const Eigen::VectorXd row = wl.row(r).transpose();
      w.numbers(row);
    }
    w.end_array();
    w.key("bias").numbers(Eigen::VectorXd(cp.params.bias(l)));
    w.end_object();
  }
  w.end_array();
  w.end_object();
  w.finish();
}

/// Rejects documents of another format, an unexpected architecture, or layer
/// arrays whose shapes do not match the architecture.
inline Checkpoint read_checkpoint(std::istream& in, const NetArchitecture* expected = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error(ErrorCode::shape_mismatch, "not a qpctl network checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::shape_mismatch, "unsupported checkpoint version");
    }
    const auto& a = doc.at("architecture");
    if (a.at("input_dim").get<int>() != NetArchitecture::input_dim ||
        a.at("output_dim").get<int>() != NetArchitecture::output_dim) {
      throw Error(ErrorCode::shape_mismatch, "checkpoint input/output sizes differ from (2, 3)");
    }
    NetArchitecture arch;
    arch.hidden_sizes = a.at("hidden_sizes").get<std::vector<int>>();
    if (expected && !(arch == *expected)) {
      throw Error(ErrorCode::shape_mismatch, "checkpoint architecture differs from the requested one");
    }
    Checkpoint cp{NetParams(arch, doc.at("seed").get<std::uint64_t>()), doc.at("gamma").get<double>(),
                  {}, doc.value("steps", 0L)};
    const auto& layers = doc.at("layers");
    if (static_cast<int>(layers.size()) != cp.params.layer_count()) {
      throw Error(ErrorCode::shape_mismatch, "checkpoint has " + std::to_string(layers.size()) +
                                                 " layers, architecture needs " +
                                                 std::to_string(cp.params.layer_count()));
    }
    for (int l = 0; l < cp.params.layer_count(); ++l) {
      const auto& layer = layers[static_cast<std::size_t>(l)];
      const auto rows = layer.at("weights").get<std::vector<std::vector<double>>>();
      const auto bias = layer.at("bias").get<std::vector<double>>();
      auto wl = cp.params.weights(l);
      auto bl = cp.params.bias(l);
      const std::string where = "layer " + std::to_string(l);
      if (static_cast<Eigen::Index>(rows.size()) != wl.rows() ||
          static_cast<Eigen::Index>(bias.size()) != bl.size()) {
        throw Error(ErrorCode::shape_mismatch, where + " has the wrong number of rows");
      }
      for (Eigen::Index r = 0; r < wl.rows(); ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != wl.cols()) {
          throw Error(ErrorCode::shape_mismatch, where + " has the wrong number of columns");
        }
        for (Eigen::Index c = 0; c < wl.cols(); ++c) wl(r, c) = row[static_cast<std::size_t>(c)];
        bl[r] = bias[static_cast<std::size_t>(r)];
      }
    }
    if (doc.contains("final_loss")) {
      const auto& l = doc["final_loss"];
      cp.final_loss = {l.value("L_p", 0.0), l.value("L_H", 0.0), l.value("L_0", 0.0),
                       l.value("L_d", 0.0), l.value("L_all", 0.0)};
    }
    if (!cp.params.all_finite()) throw Error(ErrorCode::domain, "checkpoint holds non-finite parameters");
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::shape_mismatch, std::string("malformed checkpoint: ") + e.what());
  }
}

inline constexpr const char* kLossTraceHeader = "step,L_p,L_H,L_0,L_d,L_all";

inline void write_loss_trace(std::ostream& out, const std::vector<TraceEntry>& trace) {
  out << kLossTraceHeader << '\n';
  for (const auto& e : trace) {
    out << e.step << ',' << io::fmt(e.loss.L_p) << ',' << io::fmt(e.loss.L_H) << ','
        << io::fmt(e.loss.L_0) << ',' << io::fmt(e.loss.L_d) << ',' << io::fmt(e.loss.L_all) << '\n';
  }
}

}  // namespace qpctl
