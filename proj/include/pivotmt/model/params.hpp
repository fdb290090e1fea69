#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pivotmt/tensor/adam.hpp"
#include "pivotmt/tensor/autodiff.hpp"

namespace pivotmt::model {

enum class Group : std::uint8_t { src_embed, encoder, tgt_embed, decoder, output_proj };
inline constexpr std::array<Group, 5> kAllGroups{Group::src_embed, Group::encoder, Group::tgt_embed, Group::decoder,
                                                 Group::output_proj};

std::string_view to_string(Group g);
// Throws ConfigError on an unknown name.
Group group_from_string(std::string_view name);

// Named parameters, each in exactly one group. Insertion order is the
// canonical order for checkpoints and optimizer state.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Group group;
    tensor::Var<T> var;
  };

  // Throws ConfigError on a duplicate name.
  tensor::Var<T>& add(std::string name, Group group, tensor::Tensor<T> value);

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }
  // Throws ConfigError on an unknown name.
  const tensor::Var<T>& get(std::string_view name) const;
  tensor::Var<T>& get(std::string_view name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t parameter_count() const;
  std::size_t group_parameter_count(Group g) const;

  // A frozen group stops requiring gradients and is skipped by the optimizer.
  void set_frozen(Group g, bool frozen);
  bool is_frozen(Group g) const noexcept { return frozen_[static_cast<std::size_t>(g)]; }

  void zero_grad();
  // Parameters paired with their gradients (zero-filled if none flowed).
  std::vector<tensor::AdamParam<T>> adam_view();

  // Copies every parameter of `g` from `other`. Throws ConfigError when a
  // name is missing and ShapeError when shapes differ.
  void copy_group_from(const ParamStore& other, Group g);

  template <typename U>
  ParamStore<U> cast() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::array<bool, 5> frozen_{};
};

}  // namespace pivotmt::model
