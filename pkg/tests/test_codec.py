import numpy as np
import pytest

from latentlab import Codec, Field, ValidationError, decode, encode

from conftest import rand_field


class TestIdentity:
    def test_round_trip_exact(self, rng):
        c = Codec("identity")
        x = rand_field(rng, 2, 4, 6)
        np.testing.assert_array_equal(decode(c, encode(c, x)).data, x.data)

    def test_latent_shape(self):
        assert Codec("identity").latent_shape((3, 8, 8)) == (3, 8, 8)


class TestBlockMean:
    def test_single_block_mean(self):
        c = Codec("blockmean", factor=2)
        x = Field(np.array([[[1.0, 3.0], [5.0, 7.0]]]))
        z = encode(c, x)
        np.testing.assert_array_equal(z.data, [[[4.0]]])
        np.testing.assert_array_equal(decode(c, z).data, [[[4.0, 4.0], [4.0, 4.0]]])

    @pytest.mark.parametrize("factor", [2, 4])
    def test_encode_decode_left_inverse_bit_exact(self, rng, factor):
        c = Codec("blockmean", factor=factor)
        z = rand_field(rng, 2, 4, 8)
        np.testing.assert_array_equal(encode(c, decode(c, z)).data, z.data)

    def test_residual_has_zero_block_means(self, rng):
        # decode(encode(x)) removes exactly the within-block variation
        c = Codec("blockmean", factor=2)
        x = rand_field(rng, 1, 8, 8)
        residual = x - decode(c, encode(c, x))
        block_means = encode(c, residual)
        np.testing.assert_allclose(block_means.data, 0.0, atol=1e-12)

    def test_divisibility_enforced(self, rng):
        c = Codec("blockmean", factor=3)
        with pytest.raises(ValidationError):
            encode(c, rand_field(rng, 1, 4, 4))
        with pytest.raises(ValidationError):
            c.latent_shape((1, 4, 4))

    def test_latent_shape(self):
        assert Codec("blockmean", factor=2).latent_shape((1, 8, 12)) == (1, 4, 6)


def test_codec_validation():
    with pytest.raises(ValidationError):
        Codec("bogus")
    with pytest.raises(ValidationError):
        Codec("blockmean", factor=0)
    with pytest.raises(ValidationError):
        Codec("identity", sigma_e=0.0)
