#include "usnn/model_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace usnn {

namespace {

using nlohmann::json;

// Hex-float strings: exact for every finite double, no rounding anywhere.
std::string hexd(double v) {
  char buf[48];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::hex);
  if (ec != std::errc{}) throw Error("hex-float encoding failed");
  return std::string(buf, ptr);
}

double unhexd(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] =
      std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error("invalid hex-float value: " + s);
  return v;
}

json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(hexd(m(r, c)));
  j["data"] = std::move(data);  // row-major
  return j;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error("matrix json: data size mismatch");
  Matrix m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = unhexd(data.at(static_cast<std::size_t>(k++)).get<std::string>());
  return m;
}

json vector_to_json(const Vector& v) {
  json data = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(hexd(v(i)));
  return data;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = unhexd(j.at(i).get<std::string>());
  return v;
}

json network_to_json_obj(const Network& net) {
  json j;
  j["arch"]["hidden_layers"] = net.arch.hidden_layers;
  j["arch"]["input_dim"] = net.arch.input_dim;
  j["arch"]["output_dim"] = net.arch.output_dim;
  j["arch"]["dropout_rate"] = net.arch.dropout_rate;
  j["init_seed"] = net.init_seed;
  json layers = json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    json layer;
    layer["weights"] = matrix_to_json(net.weights[l]);
    layer["biases"] = vector_to_json(net.biases[l]);
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  return j;
}

Network network_from_json_obj(const json& j) {
  Network net;
  net.arch.hidden_layers = j.at("arch").at("hidden_layers").get<std::vector<int>>();
  net.arch.input_dim = j.at("arch").at("input_dim").get<int>();
  net.arch.output_dim = j.at("arch").at("output_dim").get<int>();
  net.arch.dropout_rate = j.at("arch").at("dropout_rate").get<double>();
  net.init_seed = j.at("init_seed").get<std::uint64_t>();
  for (const auto& layer : j.at("layers")) {
    net.weights.push_back(matrix_from_json(layer.at("weights")));
    net.biases.push_back(vector_from_json(layer.at("biases")));
  }
  net.validate();
  return net;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

json parse(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error("invalid JSON in " + what);
  return j;
}

}  // namespace

std::string network_to_json(const Network& net) {
  return network_to_json_obj(net).dump(2);
}

Network network_from_json(const std::string& text) {
  return network_from_json_obj(parse(text, "network"));
}

void save_network(const Network& net, const std::string& path) {
  write_file(path, network_to_json(net) + "\n");
}

Network load_network(const std::string& path) {
  return network_from_json(read_file(path));
}

void save_model(const UsnnModel& model, const std::string& path) {
  json j;
  j["schema"] = "usnn-model-v1";
  j["uq"]["kind"] = to_string(model.base.kind);
  j["uq"]["passes"] = model.base.passes;
  j["uq"]["seed"] = model.base.seed;
  json members = json::array();
  for (const auto& m : model.base.members) members.push_back(network_to_json_obj(m));
  j["uq"]["members"] = std::move(members);
  j["meta"] = network_to_json_obj(model.meta);
  j["tau"] = model.tau;
  j["layout"]["include_pe"] = model.layout.include_pe;
  j["layout"]["append_mean_probs"] = model.layout.append_mean_probs;
  j["layout"]["standardize"] = model.layout.standardize;
  if (model.standardizer) {
    j["standardizer"]["mean"] = vector_to_json(model.standardizer->mean);
    j["standardizer"]["stdev"] = vector_to_json(model.standardizer->stdev);
  } else {
    j["standardizer"] = nullptr;
  }
  write_file(path, j.dump(2) + "\n");
}

UsnnModel load_model(const std::string& path) {
  const json j = parse(read_file(path), path);
  if (j.value("schema", "") != "usnn-model-v1")
    throw Error("not a usnn model file: " + path);
  UsnnModel model;
  model.base.kind = uq_kind_from_string(j.at("uq").at("kind").get<std::string>());
  model.base.passes = j.at("uq").at("passes").get<int>();
  model.base.seed = j.at("uq").at("seed").get<std::uint64_t>();
  for (const auto& m : j.at("uq").at("members"))
    model.base.members.push_back(network_from_json_obj(m));
  model.meta = network_from_json_obj(j.at("meta"));
  model.tau = j.at("tau").get<double>();
  model.layout.include_pe = j.at("layout").at("include_pe").get<bool>();
  model.layout.append_mean_probs = j.at("layout").at("append_mean_probs").get<bool>();
  model.layout.standardize = j.at("layout").at("standardize").get<bool>();
  if (!j.at("standardizer").is_null()) {
    Standardizer s;
    s.mean = vector_from_json(j.at("standardizer").at("mean"));
    s.stdev = vector_from_json(j.at("standardizer").at("stdev"));
    model.standardizer = std::move(s);
  }
  model.base.validate();
  return model;
}

}  // namespace usnn
