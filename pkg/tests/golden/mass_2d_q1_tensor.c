// mass_2d_q1: element-tensor kernel (tensor representation)
// element tensor: 3x3, coefficients: 0, flops: 9
void mass_2d_q1(double* A, const double* const* w,
                const double* Jinv, const double det)
{
  // Jacobian inverse entries
  const double Jinv_00 = Jinv[0];
  const double Jinv_01 = Jinv[1];
  const double Jinv_10 = Jinv[2];
  const double Jinv_11 = Jinv[3];

  // Reset element tensor
  for (unsigned int e = 0; e < 9; e++)
    A[e] = 0.0;

  // Geometry tensor
  const double G0 = det;
  // Unrolled contraction
  A[0] = 0.08333333333333333*G0;
  A[1] = 0.04166666666666667*G0;
  A[2] = 0.041666666666666664*G0;
  A[3] = 0.04166666666666667*G0;
  A[4] = 0.08333333333333345*G0;
  A[5] = 0.041666666666666685*G0;
  A[6] = 0.041666666666666664*G0;
  A[7] = 0.041666666666666685*G0;
  A[8] = 0.08333333333333333*G0;
}
