#include "racerl/track.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "racerl/errors.hpp"

namespace racerl::track {

namespace {

std::string at_index(const char* what, std::size_t i) {
  return std::string(what) + "[" + std::to_string(i) + "]";
}

// Index offset giving roughly kCurvatureSpacing meters between curvature stencil points.
std::size_t stencil_offset(const std::vector<Vec2>& pts, double polyline_length) {
  const double mean = polyline_length / static_cast<double>(pts.size());
  const auto k = static_cast<std::size_t>(std::lround(kCurvatureSpacing / mean));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(1, (pts.size() - 1) / 2));
}

}  // namespace

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::remainder(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

double circumscribed_curvature(Vec2 a, Vec2 b, Vec2 c) {
  const double ab = (b - a).norm();
  const double bc = (c - b).norm();
  const double ca = (a - c).norm();
  if (ab == 0.0 || bc == 0.0 || ca == 0.0)
    throw GeometryError("curvature: coincident stencil points");
  return 2.0 * (b - a).cross(c - b) / (ab * bc * ca);
}

// ---------------------------------------------------------------------------
// ReferencePath

ReferencePath::ReferencePath(std::vector<Vec2> points, std::vector<double> deltas,
                             double lap_length, double half_width)
    : points_(std::move(points)),
      deltas_(std::move(deltas)),
      lap_length_(lap_length),
      half_width_(half_width) {
  const std::size_t n = points_.size();
  if (n < 3) throw GeometryError("reference path needs at least 3 points");
  if (deltas_.size() != n) throw GeometryError("reference path: one delta per point required");
  if (!(half_width_ > 0.0)) throw GeometryError("reference path: half width must be positive");
  double polyline = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 next = points_[(i + 1) % n];
    const double seg = (next - points_[i]).norm();
    if (seg == 0.0) throw GeometryError(at_index("points", (i + 1) % n) + ": duplicate point");
    polyline += seg;
    if (i > 0 && !(deltas_[i] > deltas_[i - 1]))
      throw GeometryError(at_index("deltas", i) + ": not strictly increasing");
  }
  if (deltas_.front() < 0.0 || deltas_.back() >= lap_length_)
    throw GeometryError("reference path: deltas must lie in [0, lap length)");

  const std::size_t k = stencil_offset(points_, polyline);
  curvatures_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    curvatures_[i] =
        circumscribed_curvature(points_[(i + n - k) % n], points_[i], points_[(i + k) % n]);
  }
}

double ReferencePath::wrap_delta(double delta) const {
  double d = std::fmod(delta, lap_length_);
  if (d < 0.0) d += lap_length_;
  return d;
}

std::size_t ReferencePath::segment_for(double delta, double* fraction) const {
  const double d = wrap_delta(delta);
  const std::size_t n = deltas_.size();
  auto it = std::upper_bound(deltas_.begin(), deltas_.end(), d);
  std::size_t i;
  double lo, hi;
  if (it == deltas_.begin()) {
    // before the first vertex: on the closing segment
    i = n - 1;
    lo = deltas_[n - 1] - lap_length_;
    hi = deltas_[0];
  } else {
    i = static_cast<std::size_t>(it - deltas_.begin()) - 1;
    lo = deltas_[i];
    hi = i + 1 < n ? deltas_[i + 1] : deltas_[0] + lap_length_;
  }
  if (fraction) *fraction = (d - lo) / (hi - lo);
  return i;
}

double ReferencePath::curvature_at(double delta) const {
  double t = 0.0;
  const std::size_t i = segment_for(delta, &t);
  const std::size_t j = (i + 1) % curvatures_.size();
  return (1.0 - t) * curvatures_[i] + t * curvatures_[j];
}

Vec2 ReferencePath::point_at(double delta) const {
  double t = 0.0;
  const std::size_t i = segment_for(delta, &t);
  const std::size_t j = (i + 1) % points_.size();
  return points_[i] * (1.0 - t) + points_[j] * t;
}

void ReferencePath::consider_segment(std::size_t i, Vec2 position, TrackFrame& best,
                                     bool& found) const {
  const std::size_t n = points_.size();
  const Vec2 a = points_[i];
  const Vec2 b = points_[(i + 1) % n];
  const Vec2 d = b - a;
  const double t = std::clamp((position - a).dot(d) / d.dot(d), 0.0, 1.0);
  const Vec2 proj = a + d * t;
  const double dist = (position - proj).norm();
  const double hi = i + 1 < n ? deltas_[i + 1] : deltas_[0] + lap_length_;
  const double delta = wrap_delta(deltas_[i] + t * (hi - deltas_[i]));
  constexpr double tie = 1e-12;
  if (!found || dist < best.distance - tie ||
      (std::abs(dist - best.distance) <= tie && delta < best.delta)) {
    best.distance = dist;
    best.delta = delta;
    best.segment = static_cast<int>(i);
    // stash the segment parameter in `lateral` until finish()
    best.lateral = t;
    found = true;
  }
}

TrackFrame ReferencePath::finish(TrackFrame frame, Vec2 position, double heading) const {
  const std::size_t i = static_cast<std::size_t>(frame.segment);
  const Vec2 a = points_[i];
  const Vec2 d = points_[(i + 1) % points_.size()] - a;
  const Vec2 proj = a + d * frame.lateral;
  const double len = d.norm();
  frame.lateral = d.cross(position - proj) / len;
  frame.track_pos = frame.lateral / half_width_;
  frame.angle = wrap_angle(heading - std::atan2(d.y, d.x));
  return frame;
}

TrackFrame ReferencePath::project(Vec2 position, double heading) const {
  TrackFrame best;
  bool found = false;
  for (std::size_t i = 0; i < points_.size(); ++i) consider_segment(i, position, best, found);
  return finish(best, position, heading);
}

TrackFrame ReferencePath::project_near(Vec2 position, double heading, int hint, int window) const {
  const int n = static_cast<int>(points_.size());
  if (2 * window + 1 >= n) return project(position, heading);
  TrackFrame best;
  bool found = false;
  for (int k = -window; k <= window; ++k) {
    const int i = ((hint + k) % n + n) % n;
    consider_segment(static_cast<std::size_t>(i), position, best, found);
  }
  // A result pinned to the edge of the window means the true foot may lie outside it.
  const int rel = ((best.segment - hint) % n + n) % n;
  const int dist_from_hint = std::min(rel, n - rel);
  if (dist_from_hint >= window || best.distance > 4.0 * half_width_ + 10.0)
    return project(position, heading);
  return finish(best, position, heading);
}

// ---------------------------------------------------------------------------
// Track

Track::Track(std::string name, double width, std::vector<Vec2> centerline)
    : name_(std::move(name)), width_(width) {
  if (!(width_ > kCarWidth))
    throw GeometryError("track width must exceed the car width (" + std::to_string(kCarWidth) +
                        " m)");
  const std::size_t n = centerline.size();
  if (n < 3) throw GeometryError("centerline needs at least 3 points");
  std::vector<double> arc(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double seg = (centerline[i] - centerline[i - 1]).norm();
    if (!std::isfinite(seg)) throw GeometryError(at_index("centerline", i) + ": not finite");
    if (seg == 0.0) throw GeometryError(at_index("centerline", i) + ": duplicate of previous point");
    arc[i] = arc[i - 1] + seg;
  }
  const double closing = (centerline.front() - centerline.back()).norm();
  if (closing == 0.0)
    throw GeometryError(at_index("centerline", n - 1) +
                        ": duplicates the first point (the loop closes implicitly)");
  const double length = arc.back() + closing;
  axis_ = ReferencePath(centerline, std::move(arc), length, 0.5 * width_);

  left_.resize(n);
  right_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 tangent = centerline[(i + 1) % n] - centerline[(i + n - 1) % n];
    const Vec2 normal = tangent.left() * (1.0 / tangent.norm());
    left_[i] = centerline[i] + normal * half_width();
    right_[i] = centerline[i] - normal * half_width();
  }
  build_grid();
}

Vec2 Track::left_normal_at(double delta) const {
  const auto& pts = axis_.points();
  const std::size_t n = pts.size();
  // tangent from points a few meters either side keeps the normal smooth
  const Vec2 ahead = axis_.point_at(delta + 1.0);
  const Vec2 behind = axis_.point_at(delta - 1.0);
  Vec2 t = ahead - behind;
  if (t.norm() == 0.0) t = pts[1 % n] - pts[0];
  return t.left() * (1.0 / t.norm());
}

void Track::build_grid() {
  border_segments_.clear();
  const std::size_t n = left_.size();
  for (const auto* border : {&left_, &right_})
    for (std::size_t i = 0; i < n; ++i)
      border_segments_.push_back({(*border)[i], (*border)[(i + 1) % n]});

  double minx = border_segments_[0].a.x, maxx = minx;
  double miny = border_segments_[0].a.y, maxy = miny;
  for (const auto& s : border_segments_) {
    minx = std::min({minx, s.a.x, s.b.x});
    maxx = std::max({maxx, s.a.x, s.b.x});
    miny = std::min({miny, s.a.y, s.b.y});
    maxy = std::max({maxy, s.a.y, s.b.y});
  }
  grid_origin_ = {minx - cell_size_, miny - cell_size_};
  grid_cols_ = static_cast<int>((maxx - minx) / cell_size_) + 3;
  grid_rows_ = static_cast<int>((maxy - miny) / cell_size_) + 3;
  cells_.assign(static_cast<std::size_t>(grid_cols_ * grid_rows_), {});
  for (std::size_t k = 0; k < border_segments_.size(); ++k) {
    const auto& s = border_segments_[k];
    const int c0 = static_cast<int>((std::min(s.a.x, s.b.x) - grid_origin_.x) / cell_size_);
    const int c1 = static_cast<int>((std::max(s.a.x, s.b.x) - grid_origin_.x) / cell_size_);
    const int r0 = static_cast<int>((std::min(s.a.y, s.b.y) - grid_origin_.y) / cell_size_);
    const int r1 = static_cast<int>((std::max(s.a.y, s.b.y) - grid_origin_.y) / cell_size_);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        cells_[static_cast<std::size_t>(r * grid_cols_ + c)].push_back(static_cast<int>(k));
  }
}

double Track::ray_cast(Vec2 origin, Vec2 dir, double max_range) const {
  double best = max_range;
  auto test_cell = [&](int c, int r) {
    for (int k : cells_[static_cast<std::size_t>(r * grid_cols_ + c)]) {
      const auto& s = border_segments_[static_cast<std::size_t>(k)];
      const Vec2 e = s.b - s.a;
      const double denom = dir.cross(e);
      if (denom == 0.0) continue;
      const Vec2 ao = s.a - origin;
      const double t = ao.cross(e) / denom;
      const double u = ao.cross(dir) / denom;
      if (t >= 0.0 && u >= 0.0 && u <= 1.0 && t < best) best = t;
    }
  };

  // Amanatides-Woo traversal of the uniform grid.
  const double gx = (origin.x - grid_origin_.x) / cell_size_;
  const double gy = (origin.y - grid_origin_.y) / cell_size_;
  int c = static_cast<int>(std::floor(gx));
  int r = static_cast<int>(std::floor(gy));
  if (c < 0 || r < 0 || c >= grid_cols_ || r >= grid_rows_) {
    // outside the grid: brute force
    for (int rr = 0; rr < grid_rows_; ++rr)
      for (int cc = 0; cc < grid_cols_; ++cc) test_cell(cc, rr);
    return best;
  }
  const int step_c = dir.x > 0 ? 1 : -1;
  const int step_r = dir.y > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  const double t_delta_x = dir.x != 0.0 ? cell_size_ / std::abs(dir.x) : inf;
  const double t_delta_y = dir.y != 0.0 ? cell_size_ / std::abs(dir.y) : inf;
  double t_max_x = dir.x != 0.0
                       ? ((dir.x > 0 ? (c + 1 - gx) : (gx - c)) * cell_size_) / std::abs(dir.x)
                       : inf;
  double t_max_y = dir.y != 0.0
                       ? ((dir.y > 0 ? (r + 1 - gy) : (gy - r)) * cell_size_) / std::abs(dir.y)
                       : inf;
  while (true) {
    test_cell(c, r);
    const double t_exit = std::min(t_max_x, t_max_y);
    if (best <= t_exit || t_exit > max_range) break;
    if (t_max_x < t_max_y) {
      c += step_c;
      t_max_x += t_delta_x;
    } else {
      r += step_r;
      t_max_y += t_delta_y;
    }
    if (c < 0 || r < 0 || c >= grid_cols_ || r >= grid_rows_) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// RacingLine

RacingLine::RacingLine(const Track& track, std::vector<LinePoint> points)
    : track_name_(track.name()), points_(std::move(points)) {
  if (points_.size() < 3) throw GeometryError("racing line needs at least 3 points");
  const double lap = track.length();
  std::vector<Vec2> world;
  std::vector<double> deltas;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (!std::isfinite(p.delta) || !std::isfinite(p.alpha))
      throw GeometryError(at_index("points", i) + ": not finite");
    if (i == 0 && p.delta < 0.0) throw GeometryError(at_index("points", i) + ": delta < 0");
    if (i > 0 && !(p.delta > points_[i - 1].delta))
      throw GeometryError(at_index("points", i) + ": delta not strictly increasing");
    if (p.delta > lap) throw GeometryError(at_index("points", i) + ": delta beyond lap length");
    if (p.alpha < 0.0 || p.alpha > 1.0)
      throw DomainError(at_index("points", i) + ": alpha outside [0, 1]");
    world.push_back(lateral_point(track, p.delta, p.alpha));
    deltas.push_back(p.delta);
  }
  if (deltas.back() >= lap) {
    // delta == lap length is the start line again
    if (deltas.front() == 0.0)
      throw GeometryError(at_index("points", points_.size() - 1) +
                          ": duplicates the first point at the start line");
    deltas.back() = std::nextafter(lap, 0.0);
  }
  path_ = ReferencePath(std::move(world), std::move(deltas), lap, track.half_width());
}

double RacingLine::alpha_at(double delta) const {
  const double lap = path_.lap_length();
  double d = std::fmod(delta, lap);
  if (d < 0.0) d += lap;
  const auto& pts = points_;
  auto it = std::upper_bound(pts.begin(), pts.end(), d,
                             [](double v, const LinePoint& p) { return v < p.delta; });
  const LinePoint* lo;
  const LinePoint* hi;
  double lo_d, hi_d;
  if (it == pts.begin()) {
    lo = &pts.back();
    hi = &pts.front();
    lo_d = pts.back().delta - lap;
    hi_d = pts.front().delta;
  } else if (it == pts.end()) {
    lo = &pts.back();
    hi = &pts.front();
    lo_d = pts.back().delta;
    hi_d = pts.front().delta + lap;
  } else {
    hi = &*it;
    lo = &*(it - 1);
    lo_d = lo->delta;
    hi_d = hi->delta;
  }
  const double t = hi_d > lo_d ? (d - lo_d) / (hi_d - lo_d) : 0.0;
  return (1.0 - t) * lo->alpha + t * hi->alpha;
}

// ---------------------------------------------------------------------------
// Free operations

double max_speed(double kappa, double grip, double mass, double downforce, double gravity) {
  if (kappa < 0.0 || grip < 0.0 || downforce < 0.0 || gravity < 0.0 || !(mass > 0.0))
    throw DomainError("max_speed: inputs must be non-negative and mass positive");
  if (kappa == 0.0) return kUnboundedSpeed;
  return std::sqrt(grip * (1.0 / kappa) * (gravity + downforce / mass));
}

std::array<double, kRangefinderCount> rangefinders_inside(const Track& track, Vec2 position,
                                                          double heading) {
  std::array<double, kRangefinderCount> out{};
  for (int i = 0; i < kRangefinderCount; ++i) {
    const double rel = (-90.0 + 10.0 * i) * std::numbers::pi / 180.0;
    out[static_cast<std::size_t>(i)] =
        track.ray_cast(position, Vec2::from_angle(heading + rel), kRangefinderRange);
  }
  return out;
}

std::array<double, kRangefinderCount> rangefinders(const Track& track, Vec2 position,
                                                   double heading) {
  const TrackFrame f = track.axis().project(position, heading);
  if (std::abs(f.track_pos) > 1.0) return {};
  return rangefinders_inside(track, position, heading);
}

std::array<double, 4> look_ahead_curvature(const ReferencePath& path, double delta) {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < kLookAheadOffsets.size(); ++i)
    out[i] = path.curvature_at(delta + kLookAheadOffsets[i]);
  return out;
}

Vec2 lateral_point(const Track& track, double delta, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha outside [0, 1]");
  const Vec2 c = track.point_at(delta);
  const Vec2 n = track.left_normal_at(delta);
  return c + n * ((alpha - 0.5) * track.width());
}

Vec2 racing_line_to_world(const RacingLine& line, const Track& track, double delta) {
  return lateral_point(track, delta, line.alpha_at(delta));
}

// ---------------------------------------------------------------------------
// Construction

Track make_track_from_segments(std::string name, double width,
                               std::span<const TrackSegment> segments, double spacing) {
  std::vector<Vec2> pts{{0.0, 0.0}};
  Vec2 pos{};
  double heading = 0.0;
  for (const auto& s : segments) {
    if (s.kind == TrackSegment::Kind::straight) {
      const int n = std::max(1, static_cast<int>(std::lround(s.length_or_angle / spacing)));
      const Vec2 start = pos;
      for (int i = 1; i <= n; ++i) {
        pos = start + Vec2::from_angle(heading) * (s.length_or_angle * i / n);
        pts.push_back(pos);
      }
    } else {
      const double ang = s.length_or_angle;
      const double sgn = ang > 0 ? 1.0 : -1.0;
      const int n =
          std::max(1, static_cast<int>(std::lround(std::abs(ang) * s.radius / spacing)));
      const Vec2 center = pos + Vec2::from_angle(heading).left() * (sgn * s.radius);
      const double h0 = heading;
      for (int i = 1; i <= n; ++i) {
        const double h = h0 + ang * i / n;
        pos = center - Vec2::from_angle(h).left() * (sgn * s.radius);
        pts.push_back(pos);
      }
      heading = h0 + ang;
    }
  }
  if ((pts.back() - pts.front()).norm() > 1e-6 * std::max(1.0, spacing))
    throw GeometryError("segment list does not close the loop");
  pts.pop_back();
  return Track(std::move(name), width, std::move(pts));
}

Track bundled_track(const std::string& name) {
  using S = TrackSegment;
  auto twice = [](std::vector<S> half) {
    std::vector<S> all = half;
    all.insert(all.end(), half.begin(), half.end());
    return all;
  };
  if (name == "oval") {
    const auto segs = twice({S::straight(300), S::arc(180, 120)});
    return make_track_from_segments("oval", 15.0, segs);
  }
  if (name == "fast-mixed") {
    const auto segs = twice({S::straight(300), S::arc(60, 120), S::straight(100), S::arc(-40, 80),
                             S::straight(80), S::arc(160, 60)});
    return make_track_from_segments("fast-mixed", 12.0, segs);
  }
  if (name == "technical") {
    const auto segs = twice({S::straight(250), S::arc(90, 30), S::straight(80), S::arc(135, 15),
                             S::straight(60), S::arc(-135, 20), S::straight(70),
                             S::arc(90, 40)});
    return make_track_from_segments("technical", 12.0, segs);
  }
  throw ConfigError("unknown track '" + name + "'");
}

std::vector<std::string> bundled_track_names() { return {"oval", "fast-mixed", "technical"}; }

Track load_track(const std::string& name_or_path) {
  const auto names = bundled_track_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end())
    return bundled_track(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("track '" + name_or_path + "' is neither bundled nor a readable file");
  return track_from_json(nlohmann::json::parse(in));
}

nlohmann::json track_to_json(const Track& track) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : track.centerline()) pts.push_back({p.x, p.y});
  return {{"name", track.name()}, {"width", track.width()}, {"centerline", pts}};
}

Track track_from_json(const nlohmann::json& j) {
  std::vector<Vec2> pts;
  for (const auto& p : j.at("centerline")) {
    if (!p.is_array() || p.size() != 2)
      throw GeometryError(at_index("centerline", pts.size()) + ": expected [x, y]");
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return Track(j.at("name").get<std::string>(), j.at("width").get<double>(), std::move(pts));
}

nlohmann::json racing_line_to_json(const RacingLine& line) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : line.points()) pts.push_back({p.delta, p.alpha});
  return {{"track", line.track_name()}, {"points", pts}};
}

RacingLine racing_line_from_json(const nlohmann::json& j, const Track& track) {
  const auto name = j.at("track").get<std::string>();
  if (name != track.name())
    throw ConfigError("racing line belongs to track '" + name + "', not '" + track.name() + "'");
  std::vector<LinePoint> pts;
  for (const auto& p : j.at("points")) {
    if (!p.is_array() || p.size() != 2)
      throw GeometryError(at_index("points", pts.size()) + ": expected [delta, alpha]");
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return RacingLine(track, std::move(pts));
}

RacingLine load_racing_line(const std::string& path, const Track& track) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read racing line '" + path + "'");
  return racing_line_from_json(nlohmann::json::parse(in), track);
}

void save_json(const std::string& path, const nlohmann::json& j) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace racerl::track
