#include "sodarec/nn.hpp"

namespace sodarec {

template struct Mlp<float>;
template struct Mlp<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace sodarec
