#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pegring/dmp/dmp.hpp"

namespace pegring::dmp {

namespace {

using nlohmann::json;

json vec(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3d vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DmpError(DmpError::Kind::io, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json rows(const Eigen::MatrixX3d& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec(Vector3d(m.row(r).transpose())));
  return out;
}

Eigen::MatrixX3d rows(const json& j, int expected) {
  if (!j.is_array() || static_cast<int>(j.size()) != expected)
    throw DmpError(DmpError::Kind::io, "weight rows do not match the basis size");
  Eigen::MatrixX3d m(expected, 3);
  for (int r = 0; r < expected; ++r) m.row(r) = vec(j[static_cast<std::size_t>(r)]).transpose();
  return m;
}

}  // namespace

std::string model_to_json(const DmpModel& m) {
  json j;
  j["format"] = "pegring-dmp/1";
  j["K"] = vec(m.K);
  j["D"] = vec(m.D);
  j["Kq"] = m.Kq;
  j["Dq"] = m.Dq;
  j["alpha"] = m.alpha;
  j["basis"] = {{"count", m.basis.count}, {"width_factor", m.basis.width_factor}};
  j["weights"] = rows(m.weights);
  j["weights_q"] = rows(m.weights_q);
  j["x0_learn"] = vec(m.x0_learn);
  j["g_learn"] = vec(m.g_learn);
  j["duration"] = m.duration;
  // nlohmann prints doubles with round-trip precision
  return j.dump(2);
}

DmpModel model_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "pegring-dmp/1") throw DmpError(DmpError::Kind::io, "not a pegring DMP model");
    DmpModel m;
    m.K = vec(j.at("K"));
    m.D = vec(j.at("D"));
    m.Kq = j.at("Kq").get<double>();
    m.Dq = j.at("Dq").get<double>();
    m.alpha = j.at("alpha").get<double>();
    m.basis.count = j.at("basis").at("count").get<int>();
    m.basis.width_factor = j.at("basis").at("width_factor").get<double>();
    if (m.basis.count < 2) throw DmpError(DmpError::Kind::io, "basis needs at least 2 functions");
    m.weights = rows(j.at("weights"), m.basis.count);
    m.weights_q = rows(j.at("weights_q"), m.basis.count);
    m.x0_learn = vec(j.at("x0_learn"));
    m.g_learn = vec(j.at("g_learn"));
    m.duration = j.at("duration").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw DmpError(DmpError::Kind::io, std::string("bad model file: ") + e.what());
  }
}

void save_model(const DmpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DmpError(DmpError::Kind::io, "cannot write " + path.string());
  out << model_to_json(model) << '\n';
}

DmpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DmpError(DmpError::Kind::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

Demo load_demo_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DmpError(DmpError::Kind::io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,x,y,z,qw,qx,qy,qz") throw DmpError(DmpError::Kind::io, path.string() + ": unexpected header");
  Demo demo;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    double v[8];
    for (double& x : v)
      if (!(fields >> x))
        throw DmpError(DmpError::Kind::io, path.string() + ":" + std::to_string(lineno) + ": expected 8 numbers");
    TrajectorySample s;
    s.t = v[0];
    s.x = {v[1], v[2], v[3]};
    s.q = Quaterniond(v[4], v[5], v[6], v[7]);
    if (std::abs(s.q.norm() - 1.0) > 1e-6)
      throw DmpError(DmpError::Kind::io, path.string() + ":" + std::to_string(lineno) + ": quaternion not unit");
    s.q.normalize();
    if (!demo.empty() && !(s.t > demo.back().t))
      throw DmpError(DmpError::Kind::io, path.string() + ":" + std::to_string(lineno) + ": time not increasing");
    demo.push_back(s);
  }
  return demo;
}

void save_demo_csv(const Demo& demo, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DmpError(DmpError::Kind::io, "cannot write " + path.string());
  out.precision(17);
  out << "t,x,y,z,qw,qx,qy,qz\n";
  for (const auto& s : demo)
    out << s.t << ',' << s.x.x() << ',' << s.x.y() << ',' << s.x.z() << ',' << s.q.w() << ',' << s.q.x() << ','
        << s.q.y() << ',' << s.q.z() << '\n';
}

}  // namespace pegring::dmp
