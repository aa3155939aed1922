#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace racerl::track {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  /// Counter-clockwise perpendicular.
  Vec2 left() const { return {-y, x}; }
  static Vec2 from_angle(double a) { return {std::cos(a), std::sin(a)}; }
};

inline constexpr double kCarWidth = 2.0;
inline constexpr int kRangefinderCount = 19;
inline constexpr double kRangefinderRange = 200.0;
inline constexpr double kCurvatureSpacing = 5.0;
inline constexpr std::array<double, 4> kLookAheadOffsets = {20.0, 40.0, 60.0, 80.0};
/// Returned by max_speed on a straight (kappa == 0); callers cap it with the car's top speed.
inline constexpr double kUnboundedSpeed = std::numeric_limits<double>::infinity();

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Position of a car relative to a reference path.
struct TrackFrame {
  double track_pos = 0.0;  // lateral offset / half-width, positive left of travel
  double angle = 0.0;      // heading minus path tangent, (-pi, pi]
  double delta = 0.0;      // axis coordinate of the projected point, [0, lap)
  double lateral = 0.0;    // signed lateral offset in meters
  double distance = 0.0;   // unsigned distance to the path
  int segment = 0;         // index of the segment the point projects onto
};

/// A closed polyline annotated with an axis coordinate (delta) per vertex and
/// a signed curvature per vertex. Both the track axis and recorded racing
/// lines are represented this way.
class ReferencePath {
 public:
  ReferencePath() = default;
  /// `deltas` must be strictly increasing within [0, lap_length].
  ReferencePath(std::vector<Vec2> points, std::vector<double> deltas, double lap_length,
                double half_width);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& deltas() const { return deltas_; }
  const std::vector<double>& curvatures() const { return curvatures_; }
  double lap_length() const { return lap_length_; }
  double half_width() const { return half_width_; }

  /// Linear interpolation of vertex curvature at a (wrapped) axis coordinate.
  double curvature_at(double delta) const;
  Vec2 point_at(double delta) const;

  TrackFrame project(Vec2 position, double heading) const;
  /// Same as project() but only searches `window` segments either side of
  /// `hint`; falls back to the global search when the local result is far.
  TrackFrame project_near(Vec2 position, double heading, int hint, int window = 40) const;

 private:
  double wrap_delta(double delta) const;
  /// Segment index i with deltas_[i] <= delta < deltas_[i+1] (wrapping).
  std::size_t segment_for(double delta, double* fraction) const;
  void consider_segment(std::size_t i, Vec2 position, TrackFrame& best, bool& found) const;
  TrackFrame finish(TrackFrame frame, Vec2 position, double heading) const;

  std::vector<Vec2> points_;
  std::vector<double> deltas_;
  std::vector<double> curvatures_;
  double lap_length_ = 0.0;
  double half_width_ = 1.0;
};

/// Signed curvature of the circle through three points (positive = left turn).
/// Throws GeometryError on coincident points.
double circumscribed_curvature(Vec2 a, Vec2 b, Vec2 c);

/// Constant-width closed track.
class Track {
 public:
  Track(std::string name, double width, std::vector<Vec2> centerline);

  const std::string& name() const { return name_; }
  double width() const { return width_; }
  double half_width() const { return 0.5 * width_; }
  double length() const { return axis_.lap_length(); }
  const std::vector<Vec2>& centerline() const { return axis_.points(); }
  const ReferencePath& axis() const { return axis_; }
  const std::vector<Vec2>& left_border() const { return left_; }
  const std::vector<Vec2>& right_border() const { return right_; }

  Vec2 point_at(double delta) const { return axis_.point_at(delta); }
  /// Unit left normal of the axis at delta (interpolated between segments).
  Vec2 left_normal_at(double delta) const;

  /// Distance along `direction` (unit) to the first border crossing, capped at `max_range`.
  double ray_cast(Vec2 origin, Vec2 direction, double max_range = kRangefinderRange) const;

 private:
  void build_grid();

  std::string name_;
  double width_;
  ReferencePath axis_;
  std::vector<Vec2> left_;
  std::vector<Vec2> right_;

  struct Segment {
    Vec2 a, b;
  };
  std::vector<Segment> border_segments_;
  double cell_size_ = 10.0;
  Vec2 grid_origin_;
  int grid_cols_ = 0;
  int grid_rows_ = 0;
  std::vector<std::vector<int>> cells_;
};

struct LinePoint {
  double delta;  // meters along the track axis from the start line
  double alpha;  // lateral fraction of the width, measured from the right border
};

/// A racing line on a given track: samples <delta, alpha> plus the world
/// polyline and curvature derived from them.
class RacingLine {
 public:
  RacingLine(const Track& track, std::vector<LinePoint> points);

  const std::string& track_name() const { return track_name_; }
  const std::vector<LinePoint>& points() const { return points_; }
  const ReferencePath& path() const { return path_; }
  double alpha_at(double delta) const;

 private:
  std::string track_name_;
  std::vector<LinePoint> points_;
  ReferencePath path_;
};

// ---------------------------------------------------------------------------
// Operations

inline double curvature_at(const ReferencePath& path, double delta) {
  return path.curvature_at(delta);
}

/// Cornering speed limit sqrt(mu * rho * (g + F_a / m)) with rho = 1 / kappa.
/// kappa == 0 returns kUnboundedSpeed. Negative inputs throw DomainError.
double max_speed(double kappa, double grip, double mass, double downforce, double gravity = 9.81);

inline TrackFrame project(const ReferencePath& path, Vec2 position, double heading) {
  return path.project(position, heading);
}

/// 19 border distances for rays at -90..+90 degrees (10 degree steps)
/// relative to the heading; index 0 points to the car's right. All zeros
/// when the car is outside the borders.
std::array<double, kRangefinderCount> rangefinders(const Track& track, Vec2 position,
                                                   double heading);
/// Same, without the off-track check (caller already knows the car is inside).
std::array<double, kRangefinderCount> rangefinders_inside(const Track& track, Vec2 position,
                                                          double heading);

std::array<double, 4> look_ahead_curvature(const ReferencePath& path, double delta);

/// Point at lateral fraction alpha (0 = right border, 1 = left border) of the
/// width at axis coordinate delta.
Vec2 lateral_point(const Track& track, double delta, double alpha);
Vec2 racing_line_to_world(const RacingLine& line, const Track& track, double delta);

// ---------------------------------------------------------------------------
// Construction helpers and bundled tracks

struct TrackSegment {
  enum class Kind { straight, arc } kind;
  double length_or_angle;  // meters for straights, signed radians for arcs (+ = left)
  double radius = 0.0;

  static TrackSegment straight(double length) { return {Kind::straight, length, 0.0}; }
  static TrackSegment arc(double degrees, double radius) {
    return {Kind::arc, degrees * 3.14159265358979323846 / 180.0, radius};
  }
};

/// Builds a centerline by walking the segments from the origin heading +x.
/// The segment list must close on itself.
Track make_track_from_segments(std::string name, double width,
                               std::span<const TrackSegment> segments, double spacing = 1.0);

/// Names: "oval", "fast-mixed", "technical".
Track bundled_track(const std::string& name);
std::vector<std::string> bundled_track_names();

/// Resolves a bundled name or a path to a track JSON file.
Track load_track(const std::string& name_or_path);

nlohmann::json track_to_json(const Track& track);
Track track_from_json(const nlohmann::json& j);
nlohmann::json racing_line_to_json(const RacingLine& line);
RacingLine racing_line_from_json(const nlohmann::json& j, const Track& track);
RacingLine load_racing_line(const std::string& path, const Track& track);
void save_json(const std::string& path, const nlohmann::json& j);

}  // namespace racerl::track
