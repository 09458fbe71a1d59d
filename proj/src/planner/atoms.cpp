#include "pegring/planner/atoms.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace pegring::planner {

namespace {

constexpr std::string_view kArmNames[] = {"psm1", "psm2"};
constexpr std::string_view kClassNames[] = {"ring", "peg", "center"};
constexpr std::string_view kColorNames[] = {"red", "green", "blue", "yellow", "grey"};
constexpr std::string_view kPredicateNames[] = {"reachable", "on", "closed_gripper", "in_hand", "at", "distance"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::string_view (&names)[N], std::string_view text) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == text) return static_cast<E>(i);
  return std::nullopt;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void ill_sorted(const GroundAtom& atom, const std::string& why) {
  throw PlannerError(PlannerError::Kind::ill_sorted, "ill-sorted atom " + to_string(atom) + ": " + why);
}

void expect(const GroundAtom& atom, std::size_t i, Sort sort) {
  if (atom.args[i].sort != sort) ill_sorted(atom, "argument " + std::to_string(i + 1) + " has the wrong sort");
}

void expect_class(const GroundAtom& atom, std::size_t i, ObjectClass cls) {
  expect(atom, i, Sort::object_class);
  if (atom.args[i].value != static_cast<int>(cls))
    ill_sorted(atom, "argument " + std::to_string(i + 1) + " must be " + std::string(to_string(cls)));
}

}  // namespace

std::string_view to_string(Arm arm) { return kArmNames[static_cast<int>(arm)]; }
std::string_view to_string(ObjectClass cls) { return kClassNames[static_cast<int>(cls)]; }
std::string_view to_string(Color color) { return kColorNames[static_cast<int>(color)]; }
std::string_view to_string(Predicate pred) { return kPredicateNames[static_cast<int>(pred)]; }

std::optional<Arm> parse_arm(std::string_view text) { return lookup<Arm>(kArmNames, text); }
std::optional<ObjectClass> parse_object_class(std::string_view text) {
  return lookup<ObjectClass>(kClassNames, text);
}
std::optional<Color> parse_color(std::string_view text) { return lookup<Color>(kColorNames, text); }

std::string to_string(const Term& term) {
  switch (term.sort) {
    case Sort::arm:
      return std::string(kArmNames[term.value]);
    case Sort::object_class:
      return std::string(kClassNames[term.value]);
    case Sort::color:
      return std::string(kColorNames[term.value]);
    case Sort::integer:
      return std::to_string(term.value);
  }
  return "?";
}

std::string to_string(const GroundAtom& atom) {
  std::string out(to_string(atom.predicate));
  out += '(';
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    if (i) out += ',';
    out += to_string(atom.args[i]);
  }
  out += ')';
  return out;
}

namespace atoms {
GroundAtom reachable(Arm arm, ObjectClass cls, Color color) {
  return {Predicate::reachable, {Term::of(arm), Term::of(cls), Term::of(color)}};
}
GroundAtom on(Color ring, Color peg) {
  return {Predicate::on, {Term::of(ObjectClass::ring), Term::of(ring), Term::of(ObjectClass::peg), Term::of(peg)}};
}
GroundAtom closed_gripper(Arm arm) { return {Predicate::closed_gripper, {Term::of(arm)}}; }
GroundAtom in_hand(Arm arm, Color ring) {
  return {Predicate::in_hand, {Term::of(arm), Term::of(ObjectClass::ring), Term::of(ring)}};
}
GroundAtom at(Arm arm, ObjectClass cls, Color color) {
  return {Predicate::at, {Term::of(arm), Term::of(cls), Term::of(color)}};
}
GroundAtom at_center(Arm arm) { return {Predicate::at, {Term::of(arm), Term::of(ObjectClass::center)}}; }
GroundAtom distance(Arm arm, Color ring, int millimeters) {
  return {Predicate::distance,
          {Term::of(arm), Term::of(ObjectClass::ring), Term::of(ring), Term::integer(millimeters)}};
}
}  // namespace atoms

bool is_external(Predicate pred) { return pred != Predicate::at; }

void validate(const GroundAtom& atom) {
  const auto n = atom.args.size();
  auto arity = [&](std::size_t want) {
    if (n != want) ill_sorted(atom, "expected arity " + std::to_string(want));
  };
  switch (atom.predicate) {
    case Predicate::reachable:
      arity(3);
      expect(atom, 0, Sort::arm);
      expect(atom, 1, Sort::object_class);
      if (atom.args[1].value == static_cast<int>(ObjectClass::center)) ill_sorted(atom, "center is not reachable-typed");
      expect(atom, 2, Sort::color);
      break;
    case Predicate::on:
      arity(4);
      expect_class(atom, 0, ObjectClass::ring);
      expect(atom, 1, Sort::color);
      expect_class(atom, 2, ObjectClass::peg);
      expect(atom, 3, Sort::color);
      break;
    case Predicate::closed_gripper:
      arity(1);
      expect(atom, 0, Sort::arm);
      break;
    case Predicate::in_hand:
      arity(3);
      expect(atom, 0, Sort::arm);
      expect_class(atom, 1, ObjectClass::ring);
      expect(atom, 2, Sort::color);
      break;
    case Predicate::at:
      if (n == 2) {
        expect(atom, 0, Sort::arm);
        expect_class(atom, 1, ObjectClass::center);
      } else {
        arity(3);
        expect(atom, 0, Sort::arm);
        expect(atom, 1, Sort::object_class);
        if (atom.args[1].value == static_cast<int>(ObjectClass::center)) ill_sorted(atom, "at/3 needs ring or peg");
        expect(atom, 2, Sort::color);
      }
      break;
    case Predicate::distance:
      arity(4);
      expect(atom, 0, Sort::arm);
      expect_class(atom, 1, ObjectClass::ring);
      expect(atom, 2, Sort::color);
      expect(atom, 3, Sort::integer);
      if (atom.args[3].value < 0) ill_sorted(atom, "distance must be nonnegative");
      break;
  }
}

GroundAtom parse_atom(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.back() == '.') text = trim(text.substr(0, text.size() - 1));
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')')
    throw PlannerError(PlannerError::Kind::parse, "malformed atom: " + std::string(text));
  const auto name = trim(text.substr(0, open));
  const auto pred = lookup<Predicate>(kPredicateNames, name);
  if (!pred) throw PlannerError(PlannerError::Kind::ill_sorted, "unknown predicate: " + std::string(name));

  GroundAtom atom{*pred, {}};
  auto body = text.substr(open + 1, text.size() - open - 2);
  while (!body.empty()) {
    const auto comma = body.find(',');
    const auto tok = trim(body.substr(0, comma));
    if (auto a = parse_arm(tok)) {
      atom.args.push_back(Term::of(*a));
    } else if (auto c = parse_object_class(tok)) {
      atom.args.push_back(Term::of(*c));
    } else if (auto col = parse_color(tok)) {
      atom.args.push_back(Term::of(*col));
    } else {
      int value = 0;
      std::istringstream is{std::string(tok)};
      if (tok.empty() || !(is >> value) || !is.eof())
        throw PlannerError(PlannerError::Kind::ill_sorted, "unknown constant '" + std::string(tok) + "'");
      atom.args.push_back(Term::integer(value));
    }
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  validate(atom);
  return atom;
}

std::set<GroundAtom> parse_instance(std::string_view text) {
  std::set<GroundAtom> out;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    ++lineno;
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto pct = line.find('%'); pct != std::string_view::npos) line = trim(line.substr(0, pct));
    if (line.empty()) continue;
    try {
      out.insert(parse_atom(line));
    } catch (const PlannerError& e) {
      throw PlannerError(e.kind(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::set<GroundAtom> load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PlannerError(PlannerError::Kind::parse, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instance(ss.str());
}

}  // namespace pegring::planner
