from django.urls import path, include
from rest_framework.routers import DefaultRouter

from .views import DiagnoseAPIView, TrainingRunViewSet

router = DefaultRouter()
router.register(r'runs', TrainingRunViewSet, basename='runs')

urlpatterns = [
    path('api/v1/', include(router.urls)),
    path('api/v1/diagnose/', DiagnoseAPIView.as_view(), name='diagnose'),
]
