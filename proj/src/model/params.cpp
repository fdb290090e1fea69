#include "pivotmt/model/params.hpp"

#include <utility>

#include "pivotmt/error.hpp"

namespace pivotmt::model {

std::string_view to_string(Group g) {
  switch (g) {
    case Group::src_embed: return "src_embed";
    case Group::encoder: return "encoder";
    case Group::tgt_embed: return "tgt_embed";
    case Group::decoder: return "decoder";
    case Group::output_proj: return "output_proj";
  }
  return "?";
}

Group group_from_string(std::string_view name) {
  for (auto g : kAllGroups) {
    if (to_string(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

template <typename T>
tensor::Var<T>& ParamStore<T>::add(std::string name, Group group, tensor::Tensor<T> value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  auto var = tensor::Var<T>::parameter(std::move(value));
  var.node()->requires_grad = !is_frozen(group);
  entries_.push_back({std::move(name), group, std::move(var)});
  return entries_.back().var;
}

template <typename T>
const tensor::Var<T>& ParamStore<T>::get(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].var;
}

template <typename T>
tensor::Var<T>& ParamStore<T>::get(std::string_view name) {
  return const_cast<tensor::Var<T>&>(std::as_const(*this).get(name));
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

template <typename T>
std::size_t ParamStore<T>::group_parameter_count(Group g) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == g) n += e.var.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::set_frozen(Group g, bool frozen) {
  frozen_[static_cast<std::size_t>(g)] = frozen;
  for (auto& e : entries_) {
    if (e.group == g) e.var.node()->requires_grad = !frozen;
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
std::vector<tensor::AdamParam<T>> ParamStore<T>::adam_view() {
  std::vector<tensor::AdamParam<T>> out;
  out.reserve(entries_.size());
  for (auto& e : entries_) {
    auto& node = *e.var.node();
    const bool frozen = is_frozen(e.group);
    out.push_back({&node.value, &node.grad_buffer(), frozen});
  }
  return out;
}

template <typename T>
void ParamStore<T>::copy_group_from(const ParamStore& other, Group g) {
  for (auto& e : entries_) {
    if (e.group != g) continue;
    const auto& src = other.get(e.name).value();
    if (src.shape() != e.var.shape()) {
      throw ShapeError("parameter '" + e.name + "': cannot copy " + tensor::shape_str(src.shape()) + " into " +
                       tensor::shape_str(e.var.shape()));
    }
    e.var.mutable_value() = src;
  }
}

template <typename T>
template <typename U>
ParamStore<U> ParamStore<T>::cast() const {
  ParamStore<U> out;
  for (auto g : kAllGroups) out.set_frozen(g, is_frozen(g));
  for (const auto& e : entries_) out.add(e.name, e.group, e.var.value().template cast<U>());
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<double> ParamStore<float>::cast<double>() const;
template ParamStore<float> ParamStore<double>::cast<float>() const;
template ParamStore<float> ParamStore<float>::cast<float>() const;
template ParamStore<double> ParamStore<double>::cast<double>() const;

}  // namespace pivotmt::model
