#pragma once

namespace vismem {

// Thread count used by the OpenMP kernels. Defaults to $VISMEM_THREADS when
// set, otherwise the OpenMP runtime default. Results never depend on it.
void set_num_threads(int threads);
int num_threads();

}  // namespace vismem
