#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pegring::planner {

enum class Arm : std::uint8_t { psm1, psm2 };
enum class ObjectClass : std::uint8_t { ring, peg, center };
enum class Color : std::uint8_t { red, green, blue, yellow, grey };

inline constexpr int kArmCount = 2;
inline constexpr int kColorCount = 5;
inline constexpr Arm kArms[] = {Arm::psm1, Arm::psm2};
inline constexpr Color kColors[] = {Color::red, Color::green, Color::blue, Color::yellow, Color::grey};

enum class Sort : std::uint8_t { arm, object_class, color, integer };

enum class Predicate : std::uint8_t { reachable, on, closed_gripper, in_hand, at, distance };

std::string_view to_string(Arm arm);
std::string_view to_string(ObjectClass cls);
std::string_view to_string(Color color);
std::string_view to_string(Predicate pred);

std::optional<Arm> parse_arm(std::string_view text);
std::optional<ObjectClass> parse_object_class(std::string_view text);
std::optional<Color> parse_color(std::string_view text);

inline Arm other(Arm arm) { return arm == Arm::psm1 ? Arm::psm2 : Arm::psm1; }
inline int index(Arm arm) { return static_cast<int>(arm); }
inline int index(Color color) { return static_cast<int>(color); }

/// A sorted constant: the sort tag plus the enum value (or the integer itself).
struct Term {
  Sort sort = Sort::integer;
  int value = 0;

  static Term of(Arm a) { return {Sort::arm, static_cast<int>(a)}; }
  static Term of(ObjectClass c) { return {Sort::object_class, static_cast<int>(c)}; }
  static Term of(Color c) { return {Sort::color, static_cast<int>(c)}; }
  static Term integer(int v) { return {Sort::integer, v}; }

  auto operator<=>(const Term&) const = default;
};

std::string to_string(const Term& term);

struct GroundAtom {
  Predicate predicate = Predicate::reachable;
  std::vector<Term> args;

  auto operator<=>(const GroundAtom&) const = default;
};

std::string to_string(const GroundAtom& atom);

namespace atoms {
GroundAtom reachable(Arm arm, ObjectClass cls, Color color);
GroundAtom on(Color ring, Color peg);
GroundAtom closed_gripper(Arm arm);
GroundAtom in_hand(Arm arm, Color ring);
GroundAtom at(Arm arm, ObjectClass cls, Color color);
GroundAtom at_center(Arm arm);
GroundAtom distance(Arm arm, Color ring, int millimeters);
}  // namespace atoms

class PlannerError : public std::runtime_error {
 public:
  enum class Kind { ill_sorted, not_external, inconsistent, missing_distance, invalid_plan, parse };

  PlannerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Checks predicate arity and argument sorts; throws PlannerError(ill_sorted).
void validate(const GroundAtom& atom);

bool is_external(Predicate pred);

/// Parses `name(arg,...)` with an optional trailing period.
GroundAtom parse_atom(std::string_view text);

/// Domain instance file: one atom per line, `%` starts a comment.
std::set<GroundAtom> parse_instance(std::string_view text);
std::set<GroundAtom> load_instance(const std::string& path);

}  // namespace pegring::planner
