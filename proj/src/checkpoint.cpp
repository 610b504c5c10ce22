#include "milsurv/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "milsurv/errors.hpp"

namespace milsurv::model {

using nlohmann::json;

json checkpoint_to_json(const RiskModel& model) {
  if (const auto bad = model.parameters().first_non_finite(); !bad.empty())
    throw NumericalError("cannot checkpoint non-finite parameter '" + bad + "'");
  const auto& a = model.architecture();
  json j;
  j["format"] = "milsurv-checkpoint";
  j["version"] = kCheckpointVersion;
  j["architecture"] = {{"modality", std::string(to_string(a.modality))},
                       {"input_dim", a.input_dim},
                       {"attention_dim", a.attention_dim},
                       {"head_hidden", a.head_hidden},
                       {"fusion_hidden", a.fusion_hidden}};
  if (const auto& n = model.normalization())
    j["normalization"] = {{"mean", n->mean}, {"sd", n->sd}};
  else
    j["normalization"] = nullptr;
  json params = json::array();
  for (const auto& p : model.parameters().items()) {
    std::vector<double> values(p.value.data(), p.value.data() + p.value.size());
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"values", values}});
  }
  j["parameters"] = std::move(params);
  return j;
}

RiskModel checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "milsurv-checkpoint") throw FormatError("not a model checkpoint", 0);
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + std::to_string(version), 0);
    const auto& ja = j.at("architecture");
    Architecture a;
    a.modality = modality_from_string(ja.at("modality").get<std::string>());
    a.input_dim = ja.at("input_dim").get<int>();
    a.attention_dim = ja.at("attention_dim").get<int>();
    a.head_hidden = ja.at("head_hidden").get<int>();
    a.fusion_hidden = ja.at("fusion_hidden").get<int>();

    std::optional<cohort::NormalizationStats> norm;
    if (!j.at("normalization").is_null()) {
      cohort::NormalizationStats s;
      s.mean = j["normalization"].at("mean").get<std::array<double, 3>>();
      s.sd = j["normalization"].at("sd").get<std::array<double, 3>>();
      norm = s;
    }

    ParameterSet params;
    for (const auto& jp : j.at("parameters")) {
      const auto rows = jp.at("rows").get<Eigen::Index>();
      const auto cols = jp.at("cols").get<Eigen::Index>();
      const auto values = jp.at("values").get<std::vector<double>>();
      const auto name = jp.at("name").get<std::string>();
      if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != values.size())
        throw FormatError("parameter '" + name + "' has " + std::to_string(values.size()) + " values for shape " +
                              std::to_string(rows) + "x" + std::to_string(cols),
                          0);
      params.add(name, Eigen::Map<const Eigen::MatrixXd>(values.data(), rows, cols));
    }
    return RiskModel(a, std::move(params), norm);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
}

std::string encode_checkpoint(const RiskModel& model) { return checkpoint_to_json(model).dump(1) + "\n"; }

RiskModel decode_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what(), e.byte);
  }
  return checkpoint_from_json(j);
}

void save_checkpoint(const std::string& path, const RiskModel& model) {
  const auto text = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

RiskModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace milsurv::model
