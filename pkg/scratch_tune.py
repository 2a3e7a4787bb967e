import numpy as np
from bevkit.geometry import CameraIntrinsics, RigidTransform
from bevkit.scene import SceneSpec, PlaneSpec, make_pair
from bevkit.stereo import (StereoConfig, init_hypothesis, iterate_states,
                           render_stereo_depth)
from bevkit.fusion import MonoModel, mono_depth, expected_depth, weight_map, fuse
from bevkit.metrics import depth_metrics

K = CameraIntrinsics(fx=110.0, fy=110.0, cx=47.5, cy=31.5, width=96, height=64)
spec = SceneSpec(
    objects=(
        PlaneSpec(center=(-1.6, -0.8, 7.0), extent=(3.5, 2.2), signature_seed=11),
        PlaneSpec(center=(1.8, 0.8, 12.0), extent=(4.0, 3.0), signature_seed=22),
        PlaneSpec(center=(0.0, 0.0, 18.0), extent=(40.0, 28.0), signature_seed=33),
    ),
    d_min=2.0, d_max=58.0, seed=42,
)
ref_pose = RigidTransform.identity()
src_pose = RigidTransform(np.eye(3), np.array([-0.5, 0.0, 0.0]))
ref, src, M = make_pair(spec, K, ref_pose, src_pose, dt=0.0)
print("depth range:", ref.depth_gt.min(), ref.depth_gt.max(), "mask frac:", ref.mask.mean())
print("ids:", np.unique(ref.object_ids, return_counts=True))

cfg = StereoConfig()
mono = mono_depth(ref, MonoModel(seed=42), cfg.bin_depths)
mono_src = mono_depth(src, MonoModel(seed=42), cfg.bin_depths)
field0 = init_hypothesis(mono, cfg)
states = iterate_states(ref, src, M, field0, cfg)

gt = ref.depth_gt
mask = ref.mask
edges = cfg.split_edges
split_of_gt = np.clip(np.searchsorted(edges, gt, side="right") - 1, 0, cfg.n_splits - 1)

mono_exp = expected_depth(mono)
mono_rmse = np.sqrt(np.mean((mono_exp - gt)[mask] ** 2))
print(f"mono expected RMSE: {mono_rmse:.4f}")

for i, f in enumerate(states):
    mu_true = np.take_along_axis(f.mu, split_of_gt[None], axis=0)[0]
    med = np.median(np.abs(mu_true - gt)[mask])
    st = render_stereo_depth(f, cfg)
    st_exp = expected_depth(st)
    rmse = np.sqrt(np.mean((st_exp - gt)[mask] ** 2))
    w = weight_map(mono_exp, expected_depth(mono_src), f, M, K, K)
    fused = fuse(mono, st, w)
    f_exp = expected_depth(fused)
    f_rmse = np.sqrt(np.mean((f_exp - gt)[mask] ** 2))
    print(f"iter {i}: median|mu-gt|={med:.4f}  stereo_rmse={rmse:.4f}  fused_rmse={f_rmse:.4f}  mean_w={w[mask].mean():.3f}")

imp = 1 - f_rmse / mono_rmse
print(f"fused vs mono improvement at iter3: {imp*100:.1f}%")
