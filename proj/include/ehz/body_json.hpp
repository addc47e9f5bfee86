#pragma once

#include <fstream>
#include <memory>
#include <string>

#include "ehz/body.hpp"
#include "json.hpp"

namespace ehz {

using json = nlohmann::ordered_json;

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i)));
  return rows;
}

inline Vec vec_from_json(const json& a) {
  if (!a.is_array()) throw BadInput("expected a JSON array of numbers");
  Vec v(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw BadInput("expected a JSON array of numbers");
    v[int(i)] = a[i].get<double>();
  }
  return v;
}

inline Mat mat_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw BadInput("expected a JSON array of rows");
  Mat m(rows.size(), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    Vec r = vec_from_json(rows[i]);
    if (r.size() != m.cols()) throw BadInput("ragged matrix rows");
    m.row(int(i)) = r;
  }
  return m;
}

inline BodyPtr body_from_json(const json& j) {
  if (!j.is_object() || !j.contains("type")) throw BadInput("body JSON needs a \"type\" field");
  const std::string type = j.at("type").get<std::string>();
  auto child = [&](const char* key) { return body_from_json(j.at(key)); };
  if (type == "ball") return make_ball(vec_from_json(j.at("center")), j.at("radius").get<double>());
  if (type == "ellipsoid") return make_ellipsoid(vec_from_json(j.at("center")), mat_from_json(j.at("Q")));
  if (type == "polytope") return make_polytope(mat_from_json(j.at("vertices")));
  if (type == "psum") return make_psum(j.at("p").get<double>(), child("left"), child("right"));
  if (type == "product") return make_product(child("left"), child("right"));
  if (type == "polar") return make_polar(child("body"));
  if (type == "translate") return make_translate(child("body"), vec_from_json(j.at("by")));
  if (type == "linear") return make_linear(mat_from_json(j.at("matrix")), child("body"));
  if (type == "intersection") return make_intersection(child("left"), child("right"));
  throw BadInput("unknown body type \"" + type + "\"");
}

inline json body_to_json(const BodyPtr& b) {
  if (auto* p = dynamic_cast<const BallBody*>(b.get()))
    return {{"type", "ball"}, {"center", vec_to_json(p->center())}, {"radius", p->radius()}};
  if (auto* p = dynamic_cast<const EllipsoidBody*>(b.get()))
    return {{"type", "ellipsoid"}, {"center", vec_to_json(p->center())}, {"Q", mat_to_json(p->Q())}};
  if (auto* p = dynamic_cast<const PolytopeBody*>(b.get()))
    return {{"type", "polytope"}, {"vertices", mat_to_json(p->vertices())}};
  if (auto* p = dynamic_cast<const PSumBody*>(b.get()))
    return {{"type", "psum"}, {"p", p->p()}, {"left", body_to_json(p->left())}, {"right", body_to_json(p->right())}};
  if (auto* p = dynamic_cast<const ProductBody*>(b.get()))
    return {{"type", "product"}, {"left", body_to_json(p->left())}, {"right", body_to_json(p->right())}};
  if (auto* p = dynamic_cast<const TranslateBody*>(b.get()))
    return {{"type", "translate"}, {"by", vec_to_json(p->shift())}, {"body", body_to_json(p->base())}};
  if (auto* p = dynamic_cast<const LinearBody*>(b.get()))
    return {{"type", "linear"}, {"matrix", mat_to_json(p->matrix())}, {"body", body_to_json(p->base())}};
  if (auto* p = dynamic_cast<const PolarBody*>(b.get())) return {{"type", "polar"}, {"body", body_to_json(p->base())}};
  if (auto* p = dynamic_cast<const IntersectionBody*>(b.get()))
    return {{"type", "intersection"}, {"left", body_to_json(p->left())}, {"right", body_to_json(p->right())}};
  throw BadInput("cannot serialize body: " + b->describe());
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BadInput("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw BadInput("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

inline BodyPtr load_body_file(const std::string& path) { return body_from_json(load_json_file(path)); }

inline Mat load_matrix_file(const std::string& path) {
  json j = load_json_file(path);
  if (j.is_object() && j.contains("matrix")) return mat_from_json(j.at("matrix"));
  return mat_from_json(j);
}

}  // namespace ehz
