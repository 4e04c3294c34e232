import numpy as np
import pytest

from headfit.camera import apply_similarity
from headfit.errors import (DegenerateConfiguration, DimensionMismatch,
                            InvalidN, MissingAttribute, NoFaces,
                            TooFewAnnotators)
from headfit.metrics import (BBox, BenchmarkSample, LabelSet,
                             benchmark_report, chamfer_one_sided, euler_mae,
                             neighbor_indices, quality_score, quality_scores,
                             reprojection_nme, rigid_align_keypoints,
                             rotation_from_affine, scan_to_mesh,
                             z_ordinal_accuracy)
from headfit.morphable import Mesh
from headfit.rotations import EulerAngles, axis_angle_to_matrix

from conftest import random_rotation


class TestReprojectionNme:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(68, 2))
        assert reprojection_nme(a, a, BBox(0, 0, 100, 100)) == 0.0

    def test_constant_offset(self):
        a = np.random.default_rng(1).normal(size=(68, 2))
        b = a + np.array([3.0, 4.0])  # 5 px offset everywhere
        assert np.isclose(reprojection_nme(a, b, BBox(0, 0, 100, 100)),
                          0.05, atol=1e-12)

    def test_joint_scaling_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(68, 2)) * 30 + 200
        b = a + rng.normal(size=(68, 2))
        base = reprojection_nme(a, b, BBox(0, 0, 120, 80))
        scaled = reprojection_nme(3 * a, 3 * b, BBox(0, 0, 360, 240))
        assert abs(base - scaled) < 1e-12


def brute_force_zn(gt, pred, n):
    k = len(gt)
    total = 0
    count = 0
    for i in range(k):
        d = np.linalg.norm(gt - gt[i], axis=1)
        d[i] = np.inf
        nbrs = np.argsort(d, kind="stable")[:n]
        for j in nbrs:
            total += int((gt[i, 2] >= gt[j, 2]) == (pred[i, 2] >= pred[j, 2]))
            count += 1
    return total / count


class TestZOrdinalAccuracy:
    def test_perfect_prediction(self):
        v = np.random.default_rng(3).normal(size=(40, 3))
        for n in (1, 3, 5):
            assert z_ordinal_accuracy(v, v, n=n) == 1.0

    def test_negated_depth_flips_everything(self):
        v = np.random.default_rng(4).normal(size=(60, 3))
        flipped = v.copy()
        flipped[:, 2] *= -1
        assert z_ordinal_accuracy(v, flipped, n=5) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            gt = rng.normal(size=(50, 3))
            pred = gt + rng.normal(0, 0.3, size=(50, 3))
            for n in (1, 5, 9):
                assert z_ordinal_accuracy(gt, pred, n=n) == brute_force_zn(gt, pred, n)

    def test_monotone_transform_of_prediction(self):
        rng = np.random.default_rng(6)
        gt = rng.normal(size=(45, 3))
        pred = gt + rng.normal(0, 0.4, size=(45, 3))
        base = z_ordinal_accuracy(gt, pred, n=4)
        warped = pred.copy()
        warped[:, 2] = np.exp(2.0 * warped[:, 2]) + 5.0
        assert z_ordinal_accuracy(gt, warped, n=4) == base

    def test_monotone_transform_of_reference_with_fixed_neighbors(self):
        # The reference-side ordinal invariance holds for the comparison
        # step; the neighbor graph is pinned since a nonlinear z warp
        # changes the distance metric it is built from.
        rng = np.random.default_rng(7)
        gt = rng.normal(size=(45, 3))
        pred = gt + rng.normal(0, 0.4, size=(45, 3))
        nbrs = neighbor_indices(gt, 4)
        base = z_ordinal_accuracy(gt, pred, neighbors=nbrs)
        warped = gt.copy()
        warped[:, 2] = np.tanh(warped[:, 2]) * 3.0 - 1.0
        assert z_ordinal_accuracy(warped, pred, neighbors=nbrs) == base

    def test_invalid_n(self):
        v = np.zeros((10, 3))
        with pytest.raises(InvalidN):
            z_ordinal_accuracy(v, v, n=10)
        with pytest.raises(InvalidN):
            z_ordinal_accuracy(v, v, n=0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            z_ordinal_accuracy(np.zeros((5, 3)), np.zeros((6, 3)))


class TestRigidAlign:
    def test_identity(self):
        pts = np.random.default_rng(8).normal(size=(7, 3))
        t = rigid_align_keypoints(pts, pts)
        assert np.allclose(t.rotation, np.eye(3), atol=1e-10)
        assert np.allclose(t.translation, 0, atol=1e-10)
        assert t.scale == 1.0

    def test_recovers_known_similarity(self):
        rng = np.random.default_rng(9)
        for with_scale in (False, True):
            src = rng.normal(size=(7, 3))
            rot = random_rotation(rng)
            s = 2.3 if with_scale else 1.0
            trans = rng.normal(size=3)
            dst = s * src @ rot.T + trans
            t = rigid_align_keypoints(src, dst, with_scale=with_scale)
            assert np.max(np.abs(t.rotation - rot)) < 1e-8
            assert abs(t.scale - s) < 1e-8
            assert np.max(np.abs(t.translation - trans)) < 1e-8

    def test_reflection_produces_proper_rotation(self):
        src = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        dst = src.copy()
        dst[:, 0] *= -1  # mirrored correspondence
        t = rigid_align_keypoints(src, dst)
        assert np.isclose(np.linalg.det(t.rotation), 1.0, atol=1e-9)
        residual = np.linalg.norm(apply_similarity(src, t) - dst)
        assert residual > 0.1

    def test_collinear_degenerate(self):
        src = np.stack([np.arange(5.0)] * 3, axis=1)
        with pytest.raises(DegenerateConfiguration):
            rigid_align_keypoints(src, src + 1.0)

    def test_residual_invariant_under_joint_rigid_motion(self):
        rng = np.random.default_rng(10)
        src = rng.normal(size=(7, 3))
        dst = src + rng.normal(0, 0.1, size=(7, 3))

        def residual(a, b):
            t = rigid_align_keypoints(a, b)
            return np.linalg.norm(apply_similarity(a, t) - b)

        base = residual(src, dst)
        q = random_rotation(rng)
        shift = rng.normal(size=3)
        moved = residual(src @ q.T + shift, dst @ q.T + shift)
        assert abs(base - moved) < 1e-9


def brute_force_chamfer(gt, pred):
    d = np.linalg.norm(gt[:, None, :] - pred[None, :, :], axis=2)
    return float(np.mean(d.min(axis=1)))


class TestChamfer:
    def test_zero_when_pred_contains_gt(self):
        rng = np.random.default_rng(11)
        gt = rng.normal(size=(20, 3))
        pred = np.concatenate([rng.normal(size=(15, 3)), gt])
        assert chamfer_one_sided(gt, pred) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            gt = rng.normal(size=(60, 3))
            pred = rng.normal(size=(45, 3))
            assert abs(chamfer_one_sided(gt, pred) - brute_force_chamfer(gt, pred)) < 1e-9

    def test_monotone_in_prediction_set(self):
        rng = np.random.default_rng(13)
        gt = rng.normal(size=(30, 3))
        pred = rng.normal(size=(25, 3))
        base = chamfer_one_sided(gt, pred)
        extra = np.concatenate([pred, rng.normal(size=(10, 3)) + 50.0])
        assert chamfer_one_sided(gt, extra) <= base

    def test_alignment_applied(self):
        rng = np.random.default_rng(14)
        gt = rng.normal(size=(40, 3))
        rot = random_rotation(rng)
        shift = np.array([5.0, -2.0, 1.0])
        pred = gt @ rot.T + shift  # pred = R gt + t rowwise
        key_gt = gt[:7]
        key_pred = pred[:7]
        d = chamfer_one_sided(gt, pred, align_keypoints=(key_pred, key_gt))
        assert d < 1e-9


def oracle_point_triangle(p, a, b, c):
    """Independent closest-distance formulation: plane projection with
    barycentric containment, else the best of the three edge segments."""
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n)
    if nn > 1e-30:
        n = n / nn
        q = p - np.dot(p - a, n) * n
        v0, v1, v2 = b - a, c - a, q - a
        d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
        d20, d21 = v2 @ v0, v2 @ v1
        den = d00 * d11 - d01 * d01
        if abs(den) > 1e-30:
            v = (d11 * d20 - d01 * d21) / den
            w = (d00 * d21 - d01 * d20) / den
            if v >= 0 and w >= 0 and v + w <= 1:
                return abs(np.dot(p - a, n))

    def seg(s, e):
        d = e - s
        denom = np.dot(d, d)
        t = 0.0 if denom == 0 else np.clip(np.dot(p - s, d) / denom, 0.0, 1.0)
        return np.linalg.norm(p - (s + t * d))

    return min(seg(a, b), seg(b, c), seg(c, a))


def oracle_scan_to_mesh(points, vertices, faces):
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = min(oracle_point_triangle(p, vertices[f[0]], vertices[f[1]],
                                           vertices[f[2]]) for f in faces)
    return out


def random_mesh(rng, n_vertices=30):
    from scipy.spatial import ConvexHull

    pts = rng.normal(size=(n_vertices, 3))
    hull = ConvexHull(pts)
    return Mesh(vertices=pts, faces=hull.simplices.copy())


class TestScanToMesh:
    def test_points_on_surface(self):
        rng = np.random.default_rng(15)
        mesh = random_mesh(rng)
        # barycentric samples on faces lie exactly on the surface
        f = mesh.faces[rng.integers(0, len(mesh.faces), 50)]
        w = rng.dirichlet([1, 1, 1], size=50)
        pts = np.einsum("nk,nkc->nc", w, mesh.vertices[f])
        stats = scan_to_mesh(pts, mesh)
        assert stats["mean"] < 1e-12
        assert stats["rmse"] < 1e-12

    def test_perpendicular_height(self):
        tri = Mesh(vertices=np.array([[0.0, 0, 0], [2, 0, 0], [0, 2, 0]]),
                   faces=np.array([[0, 1, 2]]))
        stats = scan_to_mesh(np.array([[0.4, 0.4, 0.7]]), tri)
        assert np.isclose(stats["mean"], 0.7, atol=1e-12)
        assert np.isclose(stats["median"], 0.7, atol=1e-12)

    def test_matches_all_triangle_oracle(self):
        rng = np.random.default_rng(16)
        for _ in range(5):
            mesh = random_mesh(rng, n_vertices=25)
            pts = rng.normal(0, 1.5, size=(40, 3))
            got = scan_to_mesh(pts, mesh)
            d = oracle_scan_to_mesh(pts, mesh.vertices, mesh.faces)
            assert abs(got["mean"] - d.mean()) < 1e-9
            assert abs(got["median"] - np.median(d)) < 1e-9
            assert abs(got["std"] - d.std()) < 1e-9
            assert abs(got["rmse"] - np.sqrt(np.mean(d * d))) < 1e-9

    def test_alignment_applied(self):
        rng = np.random.default_rng(17)
        mesh = random_mesh(rng)
        f = mesh.faces[rng.integers(0, len(mesh.faces), 30)]
        w = rng.dirichlet([1, 1, 1], size=30)
        scan = np.einsum("nk,nkc->nc", w, mesh.vertices[f])
        rot = random_rotation(rng)
        moved = Mesh(vertices=mesh.vertices @ rot.T + [3.0, 1.0, -2.0],
                     faces=mesh.faces)
        key_mesh = moved.vertices[:7]
        key_scan = mesh.vertices[:7] @ np.eye(3)
        stats = scan_to_mesh(scan, moved, align_keypoints=(key_mesh, key_scan))
        assert stats["mean"] < 1e-9

    def test_no_faces(self):
        with pytest.raises(NoFaces):
            scan_to_mesh(np.zeros((3, 3)), Mesh(vertices=np.zeros((4, 3))))


class TestQualityScore:
    def _sets(self, rng, m=4, images=3):
        labelsets = []
        bboxes = []
        for _ in range(images):
            base = rng.normal(200, 40, size=(68, 2))
            labelsets.append([LabelSet(base + rng.normal(0, 2, (68, 2)),
                                       annotator_id=f"a{j}") for j in range(m)])
            bboxes.append(BBox(0, 0, rng.uniform(80, 160), rng.uniform(80, 160)))
        return labelsets, bboxes

    def test_identical_annotators(self):
        rng = np.random.default_rng(18)
        base = rng.normal(size=(68, 2))
        sets = [[LabelSet(base.copy(), "a"), LabelSet(base.copy(), "b")]]
        assert quality_score(sets, [BBox(0, 0, 100, 100)]) == 0.0

    def test_two_annotators_constant_offset(self):
        rng = np.random.default_rng(19)
        base = rng.normal(size=(68, 2))
        delta = np.array([3.0, 4.0])  # per-landmark distance 5
        sets = [[LabelSet(base, "a"), LabelSet(base + delta, "b")]]
        got = quality_score(sets, [BBox(0, 0, 100, 100)])
        assert np.isclose(got, 5.0 / 100.0, atol=1e-12)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(20)
        labelsets, bboxes = self._sets(rng, m=3, images=4)
        total = 0.0
        for sets, bbox in zip(labelsets, bboxes):
            m = len(sets)
            pair_sum = 0.0
            for i in range(m):
                for j in range(i + 1, m):
                    pair_sum += np.mean(np.linalg.norm(
                        sets[i].landmarks - sets[j].landmarks, axis=1))
            total += (2.0 / (m * (m - 1))) * pair_sum / np.sqrt(bbox.w * bbox.h)
        want = total / len(labelsets)
        assert abs(quality_score(labelsets, bboxes) - want) < 1e-12

    def test_annotator_order_invariance(self):
        rng = np.random.default_rng(21)
        labelsets, bboxes = self._sets(rng, m=5, images=2)
        base = quality_score(labelsets, bboxes)
        shuffled = [list(reversed(sets)) for sets in labelsets]
        assert abs(quality_score(shuffled, bboxes) - base) < 1e-12

    def test_joint_translation_invariance(self):
        rng = np.random.default_rng(22)
        labelsets, bboxes = self._sets(rng, m=3, images=2)
        shift = np.array([17.0, -9.0])
        moved = [[LabelSet(ls.landmarks + shift, ls.annotator_id) for ls in sets]
                 for sets in labelsets]
        assert abs(quality_score(moved, bboxes) - quality_score(labelsets, bboxes)) < 1e-12

    def test_too_few_annotators(self):
        rng = np.random.default_rng(23)
        sets = [[LabelSet(rng.normal(size=(68, 2)), "only")]]
        with pytest.raises(TooFewAnnotators):
            quality_scores(sets, [BBox(0, 0, 10, 10)])

    def test_concatenated_norm_flag(self):
        rng = np.random.default_rng(24)
        a = rng.normal(size=(68, 2))
        b = a + rng.normal(size=(68, 2))
        sets = [[LabelSet(a, "a"), LabelSet(b, "b")]]
        got = quality_score(sets, [BBox(0, 0, 100, 100)], concatenated_norm=True)
        assert np.isclose(got, np.linalg.norm(a - b) / 100.0, atol=1e-12)


class TestEulerMae:
    def test_identical(self):
        e = [EulerAngles(10.0, 20.0, 30.0)] * 3
        out = euler_mae(e, e)
        assert out == {"mae": 0.0, "pitch_mae": 0.0, "roll_mae": 0.0, "yaw_mae": 0.0}

    def test_constant_yaw_offset(self):
        gts = [EulerAngles(y, 5.0, -3.0) for y in (0.0, 10.0, 20.0)]
        preds = [EulerAngles(e.yaw + 5.0, e.pitch, e.roll) for e in gts]
        out = euler_mae(preds, gts)
        assert np.isclose(out["yaw_mae"], 5.0, atol=1e-12)
        assert np.isclose(out["mae"], 5.0 / 3.0, atol=1e-12)

    def test_wraparound(self):
        out = euler_mae([EulerAngles(359.0, 0.0, 0.0)],
                        [EulerAngles(1.0, 0.0, 0.0)])
        assert np.isclose(out["yaw_mae"], 2.0, atol=1e-12)


def make_sample(sample_id, rng, model, pose="front", noise=0.0):
    from headfit.camera import PoseParams
    from headfit.dataio import annotation_from_params
    from headfit.morphable import ShapeParams
    from headfit.rotations import matrix_to_rot6d

    shape = ShapeParams(beta=rng.normal(0, 0.4, model.num_shape),
                        psi=rng.normal(0, 0.4, model.num_expr),
                        theta_jaw=np.zeros(3))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    pp = PoseParams(rot6=matrix_to_rot6d(axis_angle_to_matrix(axis, rng.uniform(0, 0.4))),
                    scale=500.0, translation=np.array([256.0, 256.0]))
    gt = annotation_from_params(model, shape, pp, (512, 512))
    if noise > 0:
        pred_shape = ShapeParams(beta=shape.beta + rng.normal(0, noise, model.num_shape),
                                 psi=shape.psi, theta_jaw=shape.theta_jaw)
        pred = annotation_from_params(model, pred_shape, pp, (512, 512))
    else:
        pred = gt
    return BenchmarkSample(
        sample_id=sample_id,
        gt_vertices=gt.vertices, pred_vertices=pred.vertices,
        gt_matrices=gt.matrices, pred_matrices=pred.matrices,
        image_size=(512, 512), bbox=gt.bbox,
        attributes={"pose": pose, "age_group": "young", "quality": "high",
                    "occlusion": False, "expression": "neutral",
                    "illumination": "standard", "gender": "unknown"},
        subsets=gt.subsets)


class TestBenchmarkReport:
    def test_single_sample_equals_overall(self, small_model):
        rng = np.random.default_rng(25)
        s = make_sample("one", rng, small_model, noise=0.1)
        report = benchmark_report([s], subgroup_keys=("pose",))
        assert report.overall == report.per_sample["one"]
        assert report.subgroups["pose"]["front"] == report.overall

    def test_overall_is_count_weighted_mean(self, small_model):
        rng = np.random.default_rng(26)
        samples = [make_sample("a", rng, small_model, pose="front", noise=0.2),
                   make_sample("b", rng, small_model, pose="front", noise=0.2),
                   make_sample("c", rng, small_model, pose="side", noise=0.2)]
        report = benchmark_report(samples, subgroup_keys=("pose",))
        front = report.subgroups["pose"]["front"]
        side = report.subgroups["pose"]["side"]
        for metric in ("nme", "chamfer", "pose_frob"):
            want = (2 * front[metric] + 1 * side[metric]) / 3.0
            assert np.isclose(report.overall[metric], want, atol=1e-12)

    def test_perfect_prediction_scores(self, small_model):
        rng = np.random.default_rng(27)
        s = make_sample("perfect", rng, small_model, noise=0.0)
        row = benchmark_report([s]).per_sample["perfect"]
        assert row["nme"] < 1e-12
        assert row["z_n"] == 1.0
        assert row["chamfer"] < 1e-12
        assert row["pose_frob"] < 1e-9
        assert row["pose_angle"] < 1e-4

    def test_topology_gate(self, small_model):
        rng = np.random.default_rng(28)
        s = make_sample("gate", rng, small_model, noise=0.1)
        clipped = BenchmarkSample(
            sample_id="gate", gt_vertices=s.gt_vertices,
            pred_vertices=s.pred_vertices[:-5],
            gt_matrices=s.gt_matrices, pred_matrices=s.pred_matrices,
            image_size=s.image_size, bbox=s.bbox, attributes=s.attributes,
            subsets={**s.subsets, "pred_keypoint7": s.subsets["keypoint7"]})
        row = benchmark_report([clipped]).per_sample["gate"]
        assert row["z_n"] is None
        assert row["nme"] is None
        assert row["chamfer"] is not None

    def test_missing_attribute(self, small_model):
        rng = np.random.default_rng(29)
        s = make_sample("x", rng, small_model)
        bad = BenchmarkSample(
            sample_id="x", gt_vertices=s.gt_vertices, pred_vertices=s.pred_vertices,
            gt_matrices=s.gt_matrices, pred_matrices=s.pred_matrices,
            image_size=s.image_size, bbox=s.bbox, attributes={},
            subsets=s.subsets)
        with pytest.raises(MissingAttribute):
            benchmark_report([bad], subgroup_keys=("pose",))

    def test_unknown_subgroup_key(self, small_model):
        rng = np.random.default_rng(30)
        s = make_sample("x", rng, small_model)
        with pytest.raises(ValueError):
            benchmark_report([s], subgroup_keys=("nonsense",))

    def test_thread_parallel_matches_serial(self, small_model):
        rng = np.random.default_rng(31)
        samples = [make_sample(f"s{i}", rng, small_model, noise=0.15)
                   for i in range(6)]
        serial = benchmark_report(samples)
        threaded = benchmark_report(samples, max_workers=4)
        assert serial.per_sample == threaded.per_sample
        assert serial.overall == threaded.overall


class TestRotationFromAffine:
    def test_extracts_rotation_from_similarity(self):
        rng = np.random.default_rng(32)
        rot = random_rotation(rng)
        m = np.eye(4)
        m[:3, :3] = 3.3 * rot
        m[:3, 3] = rng.normal(size=3)
        assert np.max(np.abs(rotation_from_affine(m) - rot)) < 1e-10
