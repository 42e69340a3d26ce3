#ifndef CHEBSPECTRAL_CHEBSPECTRAL_HPP
#define CHEBSPECTRAL_CHEBSPECTRAL_HPP

#include "bchdav.hpp"
#include "chebyshev.hpp"
#include "clustering.hpp"
#include "csr.hpp"
#include "dense.hpp"
#include "dist_bchdav.hpp"
#include "dist_spmm.hpp"
#include "graph.hpp"
#include "orthonormalize.hpp"
#include "partition.hpp"
#include "procgrid.hpp"
#include "split.hpp"
#include "tsqr.hpp"
#include "verify.hpp"

#endif  // CHEBSPECTRAL_CHEBSPECTRAL_HPP
