#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pegring::plots {

namespace {

const char* fill(planner::Color c) {
  switch (c) {
    case planner::Color::red: return "#d62728";
    case planner::Color::green: return "#2ca02c";
    case planner::Color::blue: return "#1f77b4";
    case planner::Color::yellow: return "#e6c619";
    case planner::Color::grey: return "#8c8c8c";
  }
  return "#000";
}

constexpr const char* kArmStroke[2] = {"#6a3d9a", "#ff7f00"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string trajectory_svg(const executor::Trajectory& tr, const world::SceneState& initial) {
  // plan view: 0.12 m square at 4 px/mm; height strip below
  const double span = 0.12, px = 4000.0, W = span * px, H = span * px, strip = 160, pad = 30;
  const auto X = [&](double x) { return pad + (x + span / 2) * px; };
  const auto Y = [&](double y) { return pad + (span / 2 - y) * px; };
  std::ostringstream s;
  s.precision(5);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W + 2 * pad << "\" height=\"" << H + strip + 3 * pad
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W << "\" height=\"" << H
    << "\" fill=\"#fafafa\" stroke=\"#999\"/>\n";
  s << "<line x1=\"" << X(0) << "\" y1=\"" << pad << "\" x2=\"" << X(0) << "\" y2=\"" << pad + H
    << "\" stroke=\"#ccc\" stroke-dasharray=\"4 4\"/>\n";
  for (const auto& peg : initial.pegs)
    s << "<circle cx=\"" << X(peg.base.x()) << "\" cy=\"" << Y(peg.base.y()) << "\" r=\""
      << initial.geometry.peg_radius * px << "\" fill=\"" << fill(peg.color) << "\"/>\n";
  for (const auto& ring : initial.rings)
    s << "<circle cx=\"" << X(ring.pose.p.x()) << "\" cy=\"" << Y(ring.pose.p.y()) << "\" r=\""
      << initial.geometry.ring_major * px << "\" fill=\"none\" stroke=\"" << fill(ring.color) << "\" stroke-width=\""
      << 2 * initial.geometry.ring_minor * px << "\" opacity=\"0.5\"/>\n";
  const double t_end = tr.empty() ? 1.0 : std::max(tr.back().t, 1e-9);
  double z_max = 1e-9;
  for (const auto& row : tr)
    for (const auto& a : row.arms) z_max = std::max(z_max, a.p.z());
  const double strip_top = 2 * pad + H;
  s << "<rect x=\"" << pad << "\" y=\"" << strip_top << "\" width=\"" << W << "\" height=\"" << strip
    << "\" fill=\"#fafafa\" stroke=\"#999\"/>\n";
  // one polyline point per ~2 px of time is plenty
  const std::size_t stride = std::max<std::size_t>(1, tr.size() / static_cast<std::size_t>(W / 2));
  for (int a = 0; a < 2; ++a) {
    s << "<polyline fill=\"none\" stroke=\"" << kArmStroke[a] << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < tr.size(); i += stride) s << X(tr[i].arms[a].p.x()) << ',' << Y(tr[i].arms[a].p.y()) << ' ';
    s << "\"/>\n";
    s << "<polyline fill=\"none\" stroke=\"" << kArmStroke[a] << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < tr.size(); i += stride)
      s << pad + tr[i].t / t_end * W << ',' << strip_top + strip - tr[i].arms[a].p.z() / z_max * strip << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << pad + 8 + 60 * a << "\" y=\"" << pad + 14 << "\" fill=\"" << kArmStroke[a] << "\">psm"
      << a + 1 << "</text>\n";
  }
  s << "<text x=\"" << pad << "\" y=\"" << strip_top + strip + 16 << "\">gripper height, 0 to " << z_max * 1000
    << " mm over " << t_end << " s</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string gantt_svg(const executor::RunReport& report) {
  const double W = 900, lane = 34, pad = 40, top = 30;
  double t_end = std::max(report.total_sim_time, 1e-9);
  for (const auto& e : report.executed) t_end = std::max(t_end, e.end);
  const auto X = [&](double t) { return pad + t / t_end * W; };
  std::ostringstream s;
  s.precision(5);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W + 2 * pad << "\" height=\"" << top + 2 * lane + 50
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int a = 0; a < 2; ++a) {
    s << "<text x=\"2\" y=\"" << top + a * lane + lane / 2 + 4 << "\">psm" << a + 1 << "</text>\n";
    s << "<rect x=\"" << pad << "\" y=\"" << top + a * lane << "\" width=\"" << W << "\" height=\"" << lane - 4
      << "\" fill=\"#f4f4f4\"/>\n";
  }
  for (const auto& p : report.plans)
    s << "<line x1=\"" << X(p.start_time) << "\" y1=\"" << top - 6 << "\" x2=\"" << X(p.start_time) << "\" y2=\""
      << top + 2 * lane << "\" stroke=\"#555\" stroke-dasharray=\"3 3\"><title>plan (" << escape(p.trigger)
      << ")</title></line>\n";
  for (const auto& e : report.executed) {
    const auto action = planner::parse_action(e.action);
    const int a = planner::index(action.arm);
    const bool ok = e.outcome == "completed";
    const bool colored = action.kind != planner::ActionKind::move_center && action.kind != planner::ActionKind::release;
    const double w = std::max(1.0, X(e.end) - X(e.start));
    s << "<rect x=\"" << X(e.start) << "\" y=\"" << top + a * lane + 2 << "\" width=\"" << w << "\" height=\""
      << lane - 8 << "\" fill=\"" << (colored ? fill(action.color) : "#bbbbbb") << "\" fill-opacity=\"0.7\" stroke=\""
      << (ok ? "#333" : "#e00000") << "\" stroke-width=\"" << (ok ? 0.5 : 2) << "\"><title>" << escape(e.action)
      << " [" << e.start << ", " << e.end << "] " << escape(e.outcome) << "</title></rect>\n";
    if (w > 40)
      s << "<text x=\"" << X(e.start) + 2 << "\" y=\"" << top + a * lane + lane / 2 + 2 << "\" font-size=\"8\">"
        << escape(e.action.substr(0, e.action.find('('))) << "</text>\n";
  }
  for (double t = 0; t <= t_end + 1e-9; t += t_end > 20 ? 5 : 1)
    s << "<text x=\"" << X(t) - 3 << "\" y=\"" << top + 2 * lane + 14 << "\">" << t << "</text>\n";
  s << "<text x=\"" << pad << "\" y=\"" << top + 2 * lane + 34 << "\">" << escape(report.scenario) << ", "
    << planner::to_string(report.mode) << ", " << report.replans << " replan(s), " << report.total_sim_time
    << " s sim time</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace pegring::plots
